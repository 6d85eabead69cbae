#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stagecache/common.hpp"

namespace stagecache {

enum class MemEventKind : int {
    Alloc = 0,
    Free = 1,
    TierMoveStart = 2,
    TierMoveEnd = 3,
    StageEnter = 4,
};

inline const char* to_string(MemEventKind k) {
    switch (k) {
        case MemEventKind::Alloc: return "alloc";
        case MemEventKind::Free: return "free";
        case MemEventKind::TierMoveStart: return "move_start";
        case MemEventKind::TierMoveEnd: return "move_end";
        case MemEventKind::StageEnter: return "stage_enter";
    }
    return "?";
}

/// One entry of the event-sourced memory log. For moves, `tier` carries the
/// destination on TierMoveStart and the source on TierMoveEnd — exactly the
/// tiers whose occupancy the event changes.
struct MemEvent {
    MemEventKind kind;
    int64_t bytes = 0;
    Tier tier = Tier::Fast;
    StageTag stage = StageTag::Setup;
    uint64_t alloc_id = 0;
    uint64_t seq = 0;
    double clock = 0.0;  // seconds; monotonic or virtual depending on the run
};

/// Snapshot of per-(stage, tier) peaks and current occupancy.
struct StageReport {
    std::array<std::array<int64_t, 2>, 4> peak{};    // [stage][tier]
    std::array<int64_t, 2> current{};                // [tier]
    std::array<int64_t, 4> events_per_stage{};
    uint64_t event_count = 0;

    int64_t stage_peak(StageTag s, Tier t) const {
        return peak[static_cast<int>(s)][static_cast<int>(t)];
    }
    int64_t overall_peak(Tier t) const {
        int64_t m = 0;
        for (const auto& row : peak) m = std::max(m, row[static_cast<int>(t)]);
        return m;
    }
};

/// Event-sourced allocation ledger. Appends are serialized so the transfer
/// worker and the pipeline driver may record concurrently; `seq` totally
/// orders events. During a tier move the bytes are counted on both tiers
/// (double residency) until TierMoveEnd.
class MemLedger {
public:
    MemLedger() = default;
    MemLedger(const MemLedger&) = delete;
    MemLedger& operator=(const MemLedger&) = delete;

    // -- recording ----------------------------------------------------------

    /// Register a new allocation. Throws BudgetError if a fast-tier budget is
    /// configured and this allocation would exceed it.
    uint64_t on_alloc(int64_t bytes, Tier tier, std::optional<StageTag> stage = {});

    void on_free(uint64_t alloc_id);

    /// Begin moving an allocation to `dst`. Occupancy on `dst` rises now;
    /// the source side is released only at on_move_end. Transfer workers
    /// record with enforce_budget=false; the issuing thread prechecks.
    void on_move_start(uint64_t alloc_id, Tier dst, bool enforce_budget = true);
    void on_move_end(uint64_t alloc_id);

    /// Budget check without recording, for transfers issued to a worker.
    void precheck_fast(int64_t extra_bytes) const;

    void on_stage_enter(StageTag s);

    // -- configuration ------------------------------------------------------

    void set_fast_budget(int64_t bytes) { budget_fast_ = bytes; }
    void set_clock(std::function<double()> fn);
    void set_clock_label(std::string label) { clock_label_ = std::move(label); }

    // -- queries ------------------------------------------------------------

    StageTag current_stage() const;
    int64_t occupancy(Tier t) const;
    int64_t peak(StageTag s, Tier t) const;
    int64_t overall_peak(Tier t) const;
    /// Occupancy observed when the stage was last entered; lets callers read
    /// stage-local peak deltas with resident tensors factored out.
    int64_t occupancy_at_stage_enter(StageTag s, Tier t) const;
    int64_t live_bytes() const;
    uint64_t live_allocs() const;
    uint64_t event_count() const;

    StageReport report() const;
    std::vector<MemEvent> events() const;
    const std::string& clock_label() const { return clock_label_; }

    /// Throws InvariantError unless every allocation has been freed.
    void verify_balanced() const;

private:
    struct Live {
        int64_t bytes;
        Tier tier;
        bool moving = false;
        Tier move_dst = Tier::Fast;
    };

    void append_locked(MemEventKind kind, int64_t bytes, Tier tier, StageTag stage,
                       uint64_t alloc_id);
    void check_budget_locked(int64_t extra_fast, StageTag stage) const;

    mutable std::mutex mu_;
    std::vector<MemEvent> events_;
    std::unordered_map<uint64_t, Live> live_;
    std::array<int64_t, 2> occupancy_{};
    std::array<std::array<int64_t, 2>, 4> peak_{};
    std::array<std::array<int64_t, 2>, 4> stage_enter_occ_{};
    std::array<int64_t, 4> events_per_stage_{};
    StageTag stage_ = StageTag::Setup;
    uint64_t next_id_ = 1;
    uint64_t seq_ = 0;
    int64_t budget_fast_ = 0;  // 0 = unlimited
    std::function<double()> clock_;
    std::string clock_label_ = "monotonic";
    double epoch_ = -1.0;
};

/// Ambient ledger used by tensor allocation. One per run; tests swap in a
/// fresh instance with LedgerScope.
MemLedger& current_ledger();

/// RAII: installs `l` as the ambient ledger, restores the previous one on
/// destruction.
class LedgerScope {
public:
    explicit LedgerScope(MemLedger& l);
    ~LedgerScope();
    LedgerScope(const LedgerScope&) = delete;
    LedgerScope& operator=(const LedgerScope&) = delete;

private:
    MemLedger* prev_;
};

// Ledger export. `extras` is free-form JSON merged into the summary by the
// harness (op counters, makespan, stalls).
void write_ledger_json(const MemLedger& ledger, const std::string& path,
                       const std::string& extras_json = "");
void write_ledger_csv(const MemLedger& ledger, const std::string& path);

/// Recompute per-(stage, tier) peaks from an exported CSV timeline.
StageReport replay_csv_peaks(const std::string& path);

}  // namespace stagecache
