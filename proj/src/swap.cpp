#include "stagecache/swap.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace stagecache {

const char* to_string(TimelineEventKind k) {
    switch (k) {
        case TimelineEventKind::ComputeStart: return "compute_start";
        case TimelineEventKind::ComputeEnd: return "compute_end";
        case TimelineEventKind::XferStart: return "xfer_start";
        case TimelineEventKind::XferEnd: return "xfer_end";
        case TimelineEventKind::AwaitStart: return "await_start";
        case TimelineEventKind::AwaitEnd: return "await_end";
    }
    return "?";
}

SwapConfig::Mode swap_mode_from_string(const std::string& s) {
    if (s == "off") return SwapConfig::Mode::Off;
    if (s == "sync") return SwapConfig::Mode::Sync;
    if (s == "async") return SwapConfig::Mode::Async;
    throw ConfigError("unknown swap mode '" + s + "'");
}

const char* to_string(SwapConfig::Mode m) {
    switch (m) {
        case SwapConfig::Mode::Off: return "off";
        case SwapConfig::Mode::Sync: return "sync";
        case SwapConfig::Mode::Async: return "async";
    }
    return "?";
}

namespace {

void validate_timeline(const std::vector<TimelineEvent>& tl) {
    int compute = 0, xfer = 0, await = 0;
    for (const TimelineEvent& e : tl) {
        switch (e.kind) {
            case TimelineEventKind::ComputeStart: compute++; break;
            case TimelineEventKind::ComputeEnd: compute--; break;
            case TimelineEventKind::XferStart: xfer++; break;
            case TimelineEventKind::XferEnd: xfer--; break;
            case TimelineEventKind::AwaitStart: await++; break;
            case TimelineEventKind::AwaitEnd: await--; break;
        }
        if (compute < 0 || xfer < 0 || await < 0)
            throw InvariantError("timeline has an End before its Start");
    }
    if (compute != 0 || xfer != 0 || await != 0)
        throw InvariantError("timeline has unmatched Start/End events");
}

}  // namespace

int64_t makespan_ns(const std::vector<TimelineEvent>& timeline) {
    if (timeline.empty()) return 0;
    validate_timeline(timeline);
    int64_t lo = timeline.front().clock_ns, hi = timeline.front().clock_ns;
    for (const TimelineEvent& e : timeline) {
        lo = std::min(lo, e.clock_ns);
        hi = std::max(hi, e.clock_ns);
    }
    return hi - lo;
}

int64_t stall_total_ns(const std::vector<TimelineEvent>& timeline) {
    validate_timeline(timeline);
    int64_t total = 0;
    int64_t open = 0;
    for (const TimelineEvent& e : timeline) {
        if (e.kind == TimelineEventKind::AwaitStart) open = e.clock_ns;
        else if (e.kind == TimelineEventKind::AwaitEnd) total += e.clock_ns - open;
    }
    return total;
}

double makespan_seconds(const std::vector<TimelineEvent>& timeline) {
    return static_cast<double>(makespan_ns(timeline)) * 1e-9;
}

double stall_total_seconds(const std::vector<TimelineEvent>& timeline) {
    return static_cast<double>(stall_total_ns(timeline)) * 1e-9;
}

struct Ticket::State {
    std::mutex m;
    std::condition_variable cv;
    bool done = false;
    bool simulated = false;
    int64_t sim_end_ns = 0;
    int64_t step = -1;

    void mark_done() {
        {
            std::lock_guard lock(m);
            done = true;
        }
        cv.notify_all();
    }
    bool is_done() {
        std::lock_guard lock(m);
        return done;
    }
};

bool Ticket::pending() const {
    if (!state_) return false;
    return !state_->is_done();
}

TransferEngine::TransferEngine(const SwapConfig& config, MemLedger& ledger)
    : config_(config), ledger_(ledger), epoch_(std::chrono::steady_clock::now()) {
    if (config_.simulate && !(config_.bandwidth_bytes_per_s > 0))
        throw ConfigError("simulated transfer engine needs bandwidth > 0");
    if (config_.simulate && !(config_.sim_mac_rate > 0))
        throw ConfigError("simulated transfer engine needs a positive MAC rate");
    if (config_.mode == SwapConfig::Mode::Async && !config_.simulate)
        worker_ = std::thread([this] { worker_loop(); });
}

TransferEngine::~TransferEngine() {
    try {
        drain();
    } catch (...) {
        // teardown must not throw
    }
    if (worker_.joinable()) {
        {
            std::lock_guard lock(queue_mu_);
            stop_ = true;
        }
        queue_cv_.notify_all();
        worker_.join();
    }
    if (hook_installed_) set_mac_hook(nullptr, nullptr);
}

int64_t TransferEngine::now_ns() const {
    if (config_.simulate) return sim_now_ns_;
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now() - epoch_)
        .count();
}

int64_t TransferEngine::virtual_now_ns() const { return sim_now_ns_; }
double TransferEngine::virtual_now_seconds() const { return sim_now_ns_ * 1e-9; }

int64_t TransferEngine::transfer_ns(int64_t bytes) const {
    const double secs =
        config_.latency_s + static_cast<double>(bytes) / config_.bandwidth_bytes_per_s;
    return static_cast<int64_t>(std::llround(secs * 1e9));
}

void TransferEngine::record(TimelineEventKind kind, int64_t step, int64_t bytes,
                            int64_t clock_ns) {
    std::lock_guard lock(mu_);
    timeline_.push_back(TimelineEvent{kind, step, bytes, clock_ns});
}

void TransferEngine::mac_hook_tramp(int64_t macs, void* ctx) {
    auto* self = static_cast<TransferEngine*>(ctx);
    self->sim_now_ns_ += static_cast<int64_t>(
        std::llround(static_cast<double>(macs) / self->config_.sim_mac_rate * 1e9));
}

void TransferEngine::simulate_compute(int64_t macs) {
    if (config_.simulate) mac_hook_tramp(macs, this);
}

void TransferEngine::compute_begin(int64_t step) {
    if (config_.simulate && !hook_installed_) {
        set_mac_hook(&mac_hook_tramp, this);
        hook_installed_ = true;
    }
    record(TimelineEventKind::ComputeStart, step, 0, now_ns());
}

void TransferEngine::compute_end(int64_t step) {
    record(TimelineEventKind::ComputeEnd, step, 0, now_ns());
    if (config_.simulate) sim_flush(sim_now_ns_);
}

Tier TransferEngine::heading_tier(const Tensor5& tensor) const {
    std::lock_guard lock(mu_);
    auto it = heading_.find(&tensor);
    return it != heading_.end() ? it->second : tensor.tier();
}

// One transfer, end to end: the ledger sees the double-residency window
// exactly while the copy is in progress; the data physically changes pools.
void TransferEngine::finish_move(Job& job, int64_t start_clock_ns, int64_t end_clock_ns,
                                 bool enforce_budget) {
    record(TimelineEventKind::XferStart, job.step, job.bytes, start_clock_ns);
    ledger_.on_move_start(job.tensor->alloc_id(), job.dst, enforce_budget);
    auto fresh = std::make_unique<float[]>(static_cast<size_t>(job.tensor->elems()));
    std::memcpy(fresh.get(), job.tensor->data(), static_cast<size_t>(job.bytes));
    job.tensor->adopt_storage(std::move(fresh), job.dst);
    ledger_.on_move_end(job.tensor->alloc_id());
    {
        // A newer queued transfer (the evict -> prefetch bounce) owns the
        // heading entry; only clear it when this job was the last word.
        std::lock_guard lock(mu_);
        auto it = heading_.find(job.tensor);
        if (it != heading_.end() && it->second == job.dst) heading_.erase(it);
    }
    record(TimelineEventKind::XferEnd, job.step, job.bytes,
           end_clock_ns >= 0 ? end_clock_ns : now_ns());
    job.state->mark_done();
}

Ticket TransferEngine::submit(Tensor5& tensor, Tier dst, int64_t step) {
    if (tensor.empty()) throw InvariantError("transfer of an empty tensor");
    const int64_t bytes = tensor.bytes();

    Job job;
    job.tensor = &tensor;
    job.dst = dst;
    job.bytes = bytes;
    job.step = step;
    job.state = std::make_shared<Ticket::State>();
    job.state->step = step;

    // Budget failures must surface on the issuing thread.
    if (dst == Tier::Fast) ledger_.precheck_fast(bytes);
    {
        std::lock_guard lock(mu_);
        heading_[&tensor] = dst;
    }

    Ticket ticket;
    ticket.state_ = job.state;

    if (config_.simulate) {
        job.sim_start_ns = std::max(sim_now_ns_, sim_channel_free_ns_);
        job.sim_end_ns = job.sim_start_ns + transfer_ns(bytes);
        sim_channel_free_ns_ = job.sim_end_ns;
        job.state->simulated = true;
        job.state->sim_end_ns = job.sim_end_ns;
        if (config_.mode == SwapConfig::Mode::Sync) {
            // Blocking transfer: the virtual clock rides past completion.
            sim_now_ns_ = std::max(sim_now_ns_, job.sim_end_ns);
            finish_move(job, job.sim_start_ns, job.sim_end_ns, true);
        } else {
            sim_pending_.push_back(std::move(job));
        }
        return ticket;
    }

    if (config_.mode == SwapConfig::Mode::Sync) {
        finish_move(job, now_ns(), -1, true);
        return ticket;
    }

    {
        std::lock_guard lock(queue_mu_);
        queue_.push_back(std::move(job));
    }
    queue_cv_.notify_all();
    return ticket;
}

void TransferEngine::worker_loop() {
    for (;;) {
        Job job;
        {
            std::unique_lock lock(queue_mu_);
            queue_cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
            if (queue_.empty()) {
                if (stop_) return;
                continue;
            }
            job = std::move(queue_.front());
            queue_.pop_front();
        }
        finish_move(job, now_ns(), -1, false);
        queue_cv_.notify_all();
    }
}

Ticket TransferEngine::evict(Tensor5& tensor, int64_t step) {
    if (!config_.enabled()) return Ticket{};
    if (heading_tier(tensor) == Tier::Slow)
        throw InvariantError("evict: entry already on (or heading to) the Slow tier");
    return submit(tensor, Tier::Slow, step);
}

Ticket TransferEngine::prefetch(Tensor5& tensor, int64_t issued_at_step,
                                int64_t needed_at_step) {
    if (!config_.enabled()) return Ticket{};
    if (needed_at_step <= issued_at_step)
        throw ConfigError("prefetch: needed_at_step must be strictly after the issuing step");
    if (heading_tier(tensor) == Tier::Fast) return Ticket{};  // documented no-op
    return submit(tensor, Tier::Fast, needed_at_step);
}

Ticket TransferEngine::recall(Tensor5& tensor, int64_t step) {
    if (!config_.enabled()) return Ticket{};
    if (heading_tier(tensor) == Tier::Fast) return Ticket{};
    return submit(tensor, Tier::Fast, step);
}

void TransferEngine::await_ready(Ticket& ticket) {
    if (ticket.noop()) return;
    auto& st = *ticket.state_;
    if (st.simulated) {
        record(TimelineEventKind::AwaitStart, st.step, 0, sim_now_ns_);
        if (!st.is_done()) {
            sim_now_ns_ = std::max(sim_now_ns_, st.sim_end_ns);
            sim_flush(sim_now_ns_);
        }
        record(TimelineEventKind::AwaitEnd, st.step, 0, sim_now_ns_);
        return;
    }
    record(TimelineEventKind::AwaitStart, st.step, 0, now_ns());
    {
        std::unique_lock lock(st.m);
        st.cv.wait(lock, [&] { return st.done; });
    }
    record(TimelineEventKind::AwaitEnd, st.step, 0, now_ns());
}

void TransferEngine::drain() {
    if (config_.simulate) {
        int64_t horizon = sim_now_ns_;
        for (const Job& j : sim_pending_) horizon = std::max(horizon, j.sim_end_ns);
        sim_now_ns_ = horizon;
        sim_flush(horizon);
        return;
    }
    if (config_.mode == SwapConfig::Mode::Async && worker_.joinable()) {
        {
            std::unique_lock lock(queue_mu_);
            queue_cv_.wait(lock, [&] { return queue_.empty(); });
        }
        // The worker may still be finishing the job it popped; the heading
        // map empties at completion.
        for (;;) {
            {
                std::lock_guard hlock(mu_);
                if (heading_.empty()) break;
            }
            std::this_thread::yield();
        }
    }
}

void TransferEngine::sim_flush(int64_t up_to_ns) {
    // Completions apply in virtual end-time order at engine sync points, so
    // the ledger sequence sees a transfer finish no later than the first
    // sync point past its virtual end.
    std::sort(sim_pending_.begin(), sim_pending_.end(),
              [](const Job& a, const Job& b) { return a.sim_end_ns < b.sim_end_ns; });
    std::vector<Job> kept;
    for (Job& job : sim_pending_) {
        if (job.sim_end_ns <= up_to_ns)
            finish_move(job, job.sim_start_ns, job.sim_end_ns, false);
        else kept.push_back(std::move(job));
    }
    sim_pending_ = std::move(kept);
}

std::vector<TimelineEvent> TransferEngine::timeline() const {
    std::lock_guard lock(mu_);
    auto copy = timeline_;
    std::stable_sort(copy.begin(), copy.end(),
                     [](const TimelineEvent& a, const TimelineEvent& b) {
                         return a.clock_ns < b.clock_ns;
                     });
    return copy;
}

}  // namespace stagecache
