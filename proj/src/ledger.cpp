#include "stagecache/ledger.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stagecache {

namespace {

double monotonic_seconds() {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
}

MemLedger g_default_ledger;
MemLedger* g_current = &g_default_ledger;

}  // namespace

MemLedger& current_ledger() { return *g_current; }

LedgerScope::LedgerScope(MemLedger& l) : prev_(g_current) { g_current = &l; }
LedgerScope::~LedgerScope() { g_current = prev_; }

void MemLedger::set_clock(std::function<double()> fn) {
    std::lock_guard lock(mu_);
    clock_ = std::move(fn);
    epoch_ = -1.0;
}

void MemLedger::append_locked(MemEventKind kind, int64_t bytes, Tier tier, StageTag stage,
                              uint64_t alloc_id) {
    double now;
    if (clock_) {
        now = clock_();
    } else {
        if (epoch_ < 0.0) epoch_ = monotonic_seconds();
        now = monotonic_seconds() - epoch_;
    }
    events_.push_back(MemEvent{kind, bytes, tier, stage, alloc_id, seq_++, now});
    events_per_stage_[static_cast<int>(stage)]++;
    // Peaks are tracked against the stage the event is tagged with.
    auto& pk = peak_[static_cast<int>(stage)];
    for (int t = 0; t < 2; ++t) pk[t] = std::max(pk[t], occupancy_[t]);
}

void MemLedger::check_budget_locked(int64_t extra_fast, StageTag stage) const {
    if (budget_fast_ > 0 && occupancy_[0] + extra_fast > budget_fast_) {
        std::ostringstream os;
        os << "fast-tier budget exceeded in stage " << to_string(stage) << ": "
           << occupancy_[0] << " + " << extra_fast << " > " << budget_fast_ << " bytes";
        throw BudgetError(stage, os.str());
    }
}

uint64_t MemLedger::on_alloc(int64_t bytes, Tier tier, std::optional<StageTag> stage) {
    std::lock_guard lock(mu_);
    const StageTag s = stage.value_or(stage_);
    if (bytes < 0) throw InvariantError("alloc with negative byte count");
    if (tier == Tier::Fast) check_budget_locked(bytes, s);
    const uint64_t id = next_id_++;
    live_.emplace(id, Live{bytes, tier});
    occupancy_[static_cast<int>(tier)] += bytes;
    append_locked(MemEventKind::Alloc, bytes, tier, s, id);
    return id;
}

void MemLedger::on_free(uint64_t alloc_id) {
    std::lock_guard lock(mu_);
    auto it = live_.find(alloc_id);
    if (it == live_.end())
        throw InvariantError("free of unknown alloc_id " + std::to_string(alloc_id));
    if (it->second.moving)
        throw InvariantError("free of alloc_id " + std::to_string(alloc_id) +
                             " while a tier move is in flight");
    const Live rec = it->second;
    live_.erase(it);
    occupancy_[static_cast<int>(rec.tier)] -= rec.bytes;
    if (occupancy_[static_cast<int>(rec.tier)] < 0)
        throw InvariantError("negative occupancy after free");
    append_locked(MemEventKind::Free, rec.bytes, rec.tier, stage_, alloc_id);
}

void MemLedger::precheck_fast(int64_t extra_bytes) const {
    std::lock_guard lock(mu_);
    check_budget_locked(extra_bytes, stage_);
}

void MemLedger::on_move_start(uint64_t alloc_id, Tier dst, bool enforce_budget) {
    std::lock_guard lock(mu_);
    auto it = live_.find(alloc_id);
    if (it == live_.end())
        throw InvariantError("tier move of unknown alloc_id " + std::to_string(alloc_id));
    if (it->second.moving) throw InvariantError("tier move already in flight");
    if (it->second.tier == dst)
        throw InvariantError("tier move to the tier the allocation is already on");
    if (dst == Tier::Fast && enforce_budget) check_budget_locked(it->second.bytes, stage_);
    it->second.moving = true;
    it->second.move_dst = dst;
    // Double residency: destination occupancy rises at start, source falls
    // only at completion.
    occupancy_[static_cast<int>(dst)] += it->second.bytes;
    append_locked(MemEventKind::TierMoveStart, it->second.bytes, dst, stage_, alloc_id);
}

void MemLedger::on_move_end(uint64_t alloc_id) {
    std::lock_guard lock(mu_);
    auto it = live_.find(alloc_id);
    if (it == live_.end())
        throw InvariantError("tier move end for unknown alloc_id");
    if (!it->second.moving) throw InvariantError("tier move end without start");
    const Tier src = it->second.tier;
    it->second.tier = it->second.move_dst;
    it->second.moving = false;
    occupancy_[static_cast<int>(src)] -= it->second.bytes;
    if (occupancy_[static_cast<int>(src)] < 0)
        throw InvariantError("negative occupancy after tier move");
    append_locked(MemEventKind::TierMoveEnd, it->second.bytes, src, stage_, alloc_id);
}

void MemLedger::on_stage_enter(StageTag s) {
    std::lock_guard lock(mu_);
    stage_ = s;
    for (int t = 0; t < 2; ++t) stage_enter_occ_[static_cast<int>(s)][t] = occupancy_[t];
    append_locked(MemEventKind::StageEnter, 0, Tier::Fast, s, 0);
}

StageTag MemLedger::current_stage() const {
    std::lock_guard lock(mu_);
    return stage_;
}

int64_t MemLedger::occupancy(Tier t) const {
    std::lock_guard lock(mu_);
    return occupancy_[static_cast<int>(t)];
}

int64_t MemLedger::peak(StageTag s, Tier t) const {
    std::lock_guard lock(mu_);
    return peak_[static_cast<int>(s)][static_cast<int>(t)];
}

int64_t MemLedger::overall_peak(Tier t) const {
    std::lock_guard lock(mu_);
    int64_t m = 0;
    for (const auto& row : peak_) m = std::max(m, row[static_cast<int>(t)]);
    return m;
}

int64_t MemLedger::occupancy_at_stage_enter(StageTag s, Tier t) const {
    std::lock_guard lock(mu_);
    return stage_enter_occ_[static_cast<int>(s)][static_cast<int>(t)];
}

int64_t MemLedger::live_bytes() const {
    std::lock_guard lock(mu_);
    int64_t total = 0;
    for (const auto& [id, rec] : live_) total += rec.bytes;
    return total;
}

uint64_t MemLedger::live_allocs() const {
    std::lock_guard lock(mu_);
    return live_.size();
}

uint64_t MemLedger::event_count() const {
    std::lock_guard lock(mu_);
    return events_.size();
}

StageReport MemLedger::report() const {
    std::lock_guard lock(mu_);
    StageReport r;
    r.peak = peak_;
    r.current = occupancy_;
    r.events_per_stage = events_per_stage_;
    r.event_count = events_.size();
    return r;
}

std::vector<MemEvent> MemLedger::events() const {
    std::lock_guard lock(mu_);
    return events_;
}

void MemLedger::verify_balanced() const {
    std::lock_guard lock(mu_);
    if (!live_.empty())
        throw InvariantError("ledger imbalance: " + std::to_string(live_.size()) +
                             " allocations still live");
    if (occupancy_[0] != 0 || occupancy_[1] != 0)
        throw InvariantError("ledger imbalance: nonzero occupancy after teardown");
}

void write_ledger_json(const MemLedger& ledger, const std::string& path,
                       const std::string& extras_json) {
    const StageReport r = ledger.report();
    nlohmann::json j;
    j["clock"] = ledger.clock_label();
    for (int s = 0; s < 4; ++s) {
        const auto tag = static_cast<StageTag>(s);
        j["stages"][to_string(tag)] = {
            {"fast_peak_bytes", r.peak[s][0]},
            {"slow_peak_bytes", r.peak[s][1]},
            {"events", r.events_per_stage[s]},
        };
    }
    j["overall"] = {{"fast_peak_bytes", r.overall_peak(Tier::Fast)},
                    {"slow_peak_bytes", r.overall_peak(Tier::Slow)}};
    j["current"] = {{"fast_bytes", r.current[0]}, {"slow_bytes", r.current[1]}};
    j["event_count"] = r.event_count;
    if (!extras_json.empty()) j["run"] = nlohmann::json::parse(extras_json);
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << j.dump(2) << "\n";
}

void write_ledger_csv(const MemLedger& ledger, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << "seq,clock,kind,tier,bytes,alloc_id,occupancy_bytes,stage\n";
    // Replay occupancy so each row carries the touched tier's occupancy
    // after the event.
    int64_t occ[2] = {0, 0};
    for (const MemEvent& e : ledger.events()) {
        switch (e.kind) {
            case MemEventKind::Alloc: occ[static_cast<int>(e.tier)] += e.bytes; break;
            case MemEventKind::Free: occ[static_cast<int>(e.tier)] -= e.bytes; break;
            case MemEventKind::TierMoveStart: occ[static_cast<int>(e.tier)] += e.bytes; break;
            case MemEventKind::TierMoveEnd: occ[static_cast<int>(e.tier)] -= e.bytes; break;
            case MemEventKind::StageEnter: break;
        }
        os << e.seq << ',' << e.clock << ',' << to_string(e.kind) << ','
           << to_string(e.tier) << ',' << e.bytes << ',' << e.alloc_id << ','
           << occ[static_cast<int>(e.tier)] << ',' << to_string(e.stage) << "\n";
    }
}

StageReport replay_csv_peaks(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot read " + path);
    std::string line;
    std::getline(is, line);  // header
    StageReport r;
    int64_t occ[2] = {0, 0};
    uint64_t count = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::array<std::string, 8> col;
        size_t start = 0;
        for (int i = 0; i < 8; ++i) {
            const size_t comma = line.find(',', start);
            col[i] = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                   : comma - start);
            start = comma == std::string::npos ? line.size() : comma + 1;
        }
        const std::string& kind = col[2];
        const int tier = col[3] == "fast" ? 0 : 1;
        const int64_t bytes = std::stoll(col[4]);
        StageTag stage = StageTag::Setup;
        if (col[7] == "encode") stage = StageTag::Encode;
        else if (col[7] == "denoise") stage = StageTag::Denoise;
        else if (col[7] == "decode") stage = StageTag::Decode;

        if (kind == "alloc" || kind == "move_start") occ[tier] += bytes;
        else if (kind == "free" || kind == "move_end") occ[tier] -= bytes;
        auto& pk = r.peak[static_cast<int>(stage)];
        for (int t = 0; t < 2; ++t) pk[t] = std::max(pk[t], occ[t]);
        r.events_per_stage[static_cast<int>(stage)]++;
        count++;
    }
    r.current = {occ[0], occ[1]};
    r.event_count = count;
    return r;
}

}  // namespace stagecache
