#pragma once

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <thread>
#include <unordered_map>
#include <vector>

#include "stagecache/ledger.hpp"
#include "stagecache/tensor.hpp"

namespace stagecache {

enum class TimelineEventKind : int {
    ComputeStart = 0,
    ComputeEnd = 1,
    XferStart = 2,
    XferEnd = 3,
    AwaitStart = 4,
    AwaitEnd = 5,
};

const char* to_string(TimelineEventKind k);

struct TimelineEvent {
    TimelineEventKind kind;
    int64_t step = -1;
    int64_t bytes = 0;
    int64_t clock_ns = 0;
};

/// Span between the first and last event. Throws on unmatched Start/End.
int64_t makespan_ns(const std::vector<TimelineEvent>& timeline);
/// Total await time across the timeline.
int64_t stall_total_ns(const std::vector<TimelineEvent>& timeline);
double makespan_seconds(const std::vector<TimelineEvent>& timeline);
double stall_total_seconds(const std::vector<TimelineEvent>& timeline);

struct SwapConfig {
    enum class Mode { Off, Sync, Async } mode = Mode::Off;
    /// Simulated timing: transfers cost latency + bytes/bandwidth and compute
    /// costs MACs/rate on a virtual nanosecond clock. Numerics are identical
    /// to the live engines; only clocks and ledger timing differ.
    bool simulate = false;
    double bandwidth_bytes_per_s = 4.0e9;
    double latency_s = 20e-6;
    double sim_mac_rate = 5.0e7;  // virtual compute speed, MACs/s

    bool enabled() const { return mode != Mode::Off; }
};

SwapConfig::Mode swap_mode_from_string(const std::string& s);
const char* to_string(SwapConfig::Mode m);

class TransferEngine;

/// Completion handle for one transfer. A default-constructed ticket is a
/// completed no-op.
class Ticket {
public:
    Ticket() = default;
    bool pending() const;
    bool noop() const { return state_ == nullptr; }

private:
    friend class TransferEngine;
    struct State;
    std::shared_ptr<State> state_;
};

/// Moves cache entries between tiers. Three interchangeable engines:
/// synchronous (inline copy), async-overlapped (background worker, one
/// transfer in flight at a time) and simulated (virtual clock, the
/// quantitative-timing authority). Ledger accounting is conservative: the
/// destination is occupied from issue, the source released at completion.
class TransferEngine {
public:
    TransferEngine(const SwapConfig& config, MemLedger& ledger);
    ~TransferEngine();
    TransferEngine(const TransferEngine&) = delete;
    TransferEngine& operator=(const TransferEngine&) = delete;

    const SwapConfig& config() const { return config_; }

    /// Bracket one step's compute so the timeline records it; in simulated
    /// mode the MAC hook advances the virtual clock inside the bracket.
    void compute_begin(int64_t step);
    void compute_end(int64_t step);

    /// Advance the virtual clock as if `macs` of compute retired. This is
    /// what the MAC hook does during a bracket; exposed for scenario tests.
    /// Live engines ignore it.
    void simulate_compute(int64_t macs);

    /// Queue a Fast->Slow move. Errors if the tensor is already on (or
    /// heading to) the Slow tier.
    Ticket evict(Tensor5& tensor, int64_t step);

    /// Queue a Slow->Fast move ahead of use; a tensor already resident (and
    /// not moving away) yields a completed no-op ticket. `needed_at_step`
    /// must be strictly after the issuing step.
    Ticket prefetch(Tensor5& tensor, int64_t issued_at_step, int64_t needed_at_step);

    /// Immediate Slow->Fast recall for a fetch that found its entry cold.
    Ticket recall(Tensor5& tensor, int64_t step);

    /// Block until the ticket's transfer has completed; records an
    /// AwaitStart/AwaitEnd pair (none for no-op tickets). Idempotent.
    void await_ready(Ticket& ticket);

    /// Wait until every queued transfer has completed.
    void drain();

    std::vector<TimelineEvent> timeline() const;
    double virtual_now_seconds() const;
    int64_t virtual_now_ns() const;

private:
    struct Job {
        Tensor5* tensor = nullptr;
        Tier dst = Tier::Slow;
        int64_t bytes = 0;
        int64_t step = -1;
        std::shared_ptr<Ticket::State> state;
        int64_t sim_start_ns = 0;
        int64_t sim_end_ns = 0;
    };

    Ticket submit(Tensor5& tensor, Tier dst, int64_t step);
    void worker_loop();
    void record(TimelineEventKind kind, int64_t step, int64_t bytes, int64_t clock_ns);
    int64_t now_ns() const;
    int64_t transfer_ns(int64_t bytes) const;
    void sim_flush(int64_t up_to_ns);
    void finish_move(Job& job, int64_t start_clock_ns, int64_t end_clock_ns,
                     bool enforce_budget);
    Tier heading_tier(const Tensor5& tensor) const;

    SwapConfig config_;
    MemLedger& ledger_;
    std::chrono::steady_clock::time_point epoch_;

    mutable std::mutex mu_;  // timeline + heading map
    std::vector<TimelineEvent> timeline_;
    std::unordered_map<const Tensor5*, Tier> heading_;

    // async worker
    std::thread worker_;
    std::mutex queue_mu_;
    std::condition_variable queue_cv_;
    std::deque<Job> queue_;
    bool stop_ = false;

    // simulated clock
    int64_t sim_now_ns_ = 0;
    int64_t sim_channel_free_ns_ = 0;
    std::vector<Job> sim_pending_;
    bool hook_installed_ = false;

    static void mac_hook_tramp(int64_t macs, void* ctx);
};

}  // namespace stagecache
