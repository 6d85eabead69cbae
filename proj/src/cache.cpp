#include "stagecache/cache.hpp"

#include <algorithm>

namespace stagecache {

int64_t StepPlan::full_count() const {
    return std::count(kinds.begin(), kinds.end(), StepKind::Full);
}

int64_t StepPlan::cached_count() const {
    return std::count(kinds.begin(), kinds.end(), StepKind::Cached);
}

bool StepPlan::is_last_consumer(int64_t s) const {
    if (kinds[s] != StepKind::Cached) return false;
    return s + 1 >= size() || kinds[s + 1] == StepKind::Full;
}

bool StepPlan::has_consumers(int64_t s) const {
    if (kinds[s] != StepKind::Full) return false;
    return s + 1 < size() && kinds[s + 1] == StepKind::Cached;
}

StepPlan plan_steps(int64_t total_steps, const CachePolicy& policy) {
    policy.validate();
    if (total_steps < 1) throw ConfigError("plan_steps needs total_steps >= 1");
    StepPlan plan;
    plan.kinds.resize(total_steps);
    for (int64_t s = 0; s < total_steps; ++s)
        plan.kinds[s] = (s % policy.interval_n == 0) ? StepKind::Full : StepKind::Cached;
    return plan;
}

CacheStore::~CacheStore() {
    try {
        teardown();
    } catch (...) {
        // teardown must not throw from a destructor
    }
}

void CacheStore::store(DeepFeatures deep, int64_t step) {
    if (deep.u_next.empty()) throw InvariantError("store of empty deep features");
    if (deep.u_next.shape().b != 2)
        throw ShapeError("cache store expects b == 2 guidance batch, got " +
                         deep.u_next.shape().str());
    for (int b = 0; b < 2; ++b) {
        Entry& e = entries_[b];
        if (e.present) {
            if (engine_ && e.ticket.pending()) engine_->await_ready(e.ticket);
            e.tensor = Tensor5();
            e.present = false;
        }
        e.tensor = select_batch(deep.u_next, b);
        e.ticket = Ticket{};
        e.present = true;
    }
    origin_step_ = step;
    origin_t_ = deep.origin_t;
}

bool CacheStore::has(Branch b) const { return slot(b).present; }

const Tensor5& CacheStore::fetch(Branch b) {
    Entry& e = slot(b);
    if (!e.present)
        throw InvariantError("cache fetch before any store for branch " +
                             std::to_string(static_cast<int>(b)));
    if (engine_) {
        engine_->await_ready(e.ticket);
        if (e.tensor.tier() == Tier::Slow) {
            e.ticket = engine_->recall(e.tensor, origin_step_);
            engine_->await_ready(e.ticket);
        }
    }
    if (e.tensor.tier() != Tier::Fast)
        throw InvariantError("cache entry still on the Slow tier after fetch");
    return e.tensor;
}

DeepFeatures CacheStore::assemble() {
    const Tensor5& u = fetch(Branch::Uncond);
    const Tensor5& c = fetch(Branch::Cond);
    DeepFeatures deep;
    deep.u_next = stack_batch({&u, &c});
    deep.origin_step = origin_step_;
    deep.origin_t = origin_t_;
    return deep;
}

void CacheStore::evict_all(int64_t step) {
    if (!engine_) return;
    for (Entry& e : entries_) {
        if (!e.present) continue;
        e.ticket = engine_->evict(e.tensor, step);
    }
}

void CacheStore::prefetch_all(int64_t issued_at_step, int64_t needed_at_step) {
    if (!engine_) return;
    for (Entry& e : entries_) {
        if (!e.present) continue;
        e.ticket = engine_->prefetch(e.tensor, issued_at_step, needed_at_step);
    }
}

int64_t CacheStore::live_bytes() const {
    int64_t total = 0;
    for (const Entry& e : entries_)
        if (e.present) total += e.tensor.bytes();
    return total;
}

void CacheStore::teardown() {
    for (Entry& e : entries_) {
        if (!e.present) continue;
        if (engine_ && e.ticket.pending()) engine_->await_ready(e.ticket);
        e.tensor = Tensor5();
        e.present = false;
    }
}

int64_t cache_bytes(const CachePolicy& policy, const UNetConfig& config,
                    const Shape5& model_input) {
    policy.validate();
    UNetConfig cfg = config;
    cfg.cache_depth = policy.cache_depth;
    return cache_feature_shape(cfg, model_input).bytes();
}

}  // namespace stagecache
