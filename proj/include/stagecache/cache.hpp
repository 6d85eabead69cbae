#pragma once

#include <array>
#include <optional>
#include <vector>

#include "stagecache/swap.hpp"
#include "stagecache/unet.hpp"

namespace stagecache {

/// Feature-cache policy: refresh the deep features once every `interval_n`
/// inference steps and reuse them in between; `cache_depth` is the U-Net
/// seam level.
struct CachePolicy {
    int64_t interval_n = 2;
    int64_t cache_depth = 0;
    void validate() const {
        if (interval_n < 1) throw ConfigError("cache interval must be >= 1");
    }
};

enum class StepKind { Full, Cached };

/// Which inference steps recompute vs reuse. Step s is Full iff
/// s mod N == 0, so the plan always opens with a refresh.
struct StepPlan {
    std::vector<StepKind> kinds;

    int64_t size() const { return static_cast<int64_t>(kinds.size()); }
    bool is_full(int64_t s) const { return kinds[s] == StepKind::Full; }
    int64_t full_count() const;
    int64_t cached_count() const;
    /// True if s is the last cached step before the next refresh (or the end).
    bool is_last_consumer(int64_t s) const;
    /// True if the refresh at s is followed by at least one cached step.
    bool has_consumers(int64_t s) const;
};

StepPlan plan_steps(int64_t total_steps, const CachePolicy& policy);

enum class Branch : int { Uncond = 0, Cond = 1 };

/// Owns the per-branch cached deep features. The classifier-free-guidance
/// batch axis is split into two independently swappable entries; assemble()
/// reconstitutes the b=2 tensor the seam consumes. Single-driver contract:
/// store/fetch are not thread safe.
class CacheStore {
public:
    explicit CacheStore(TransferEngine* engine = nullptr) : engine_(engine) {}
    ~CacheStore();
    CacheStore(const CacheStore&) = delete;
    CacheStore& operator=(const CacheStore&) = delete;

    /// Replace both branch entries from b=2 deep features; old entries are
    /// freed once their pending transfers settle.
    void store(DeepFeatures deep, int64_t step);

    /// Await the entry's pending transfer and return it. An entry left cold
    /// on the Slow tier is recalled synchronously through the engine.
    const Tensor5& fetch(Branch b);

    bool has(Branch b) const;
    int64_t origin_step() const { return origin_step_; }
    int64_t origin_t() const { return origin_t_; }

    /// Stack both branches back into b=2 deep features.
    DeepFeatures assemble();

    void evict_all(int64_t step);
    void prefetch_all(int64_t issued_at_step, int64_t needed_at_step);

    /// Bytes of live cache entries across branches.
    int64_t live_bytes() const;

    /// Await pending transfers and free the entries.
    void teardown();

private:
    struct Entry {
        Tensor5 tensor;
        Ticket ticket;
        bool present = false;
    };
    Entry& slot(Branch b) { return entries_[static_cast<int>(b)]; }
    const Entry& slot(Branch b) const { return entries_[static_cast<int>(b)]; }

    TransferEngine* engine_;
    std::array<Entry, 2> entries_;
    int64_t origin_step_ = -1;
    int64_t origin_t_ = -1;
};

/// Steady-state cache footprint for a policy: bytes of the deep-feature
/// tensor at the seam, covering both guidance branches.
int64_t cache_bytes(const CachePolicy& policy, const UNetConfig& config,
                    const Shape5& model_input);

}  // namespace stagecache
