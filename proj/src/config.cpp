#include "stagecache/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stagecache {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int64_t out = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
}

uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected an unsigned integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(v);
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string halo_to_string(const HaloMode& h) {
    switch (h.kind) {
        case HaloMode::Kind::Exact: return "exact";
        case HaloMode::Kind::None: return "none";
        case HaloMode::Kind::Fixed: return "fixed";
    }
    return "?";
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

}  // namespace

RunConfig default_config() {
    RunConfig cfg;
    cfg.chunk.eta = 2;
    cfg.chunk.omega = 2;
    cfg.chunk.halo = HaloMode::exact();
    cfg.chunk.targets = {"u0"};
    cfg.swap.mode = SwapConfig::Mode::Async;
    return cfg;
}

void RunConfig::validate() const {
    if (frames < 1) throw ConfigError("run.frames must be >= 1");
    if (height < 1 || width < 1) throw ConfigError("run.height/run.width must be >= 1");
    if (mode != "text" && mode != "image")
        throw ConfigError("run.mode must be 'text' or 'image'");
    unet.validate();
    codec.validate();
    if (unet.in_channels != codec.latent_channels)
        throw ConfigError("unet.in_channels must equal codec.latent_channels");
    if (height % codec.scale() != 0 || width % codec.scale() != 0)
        throw ConfigError("pixel extents must be divisible by the codec scale " +
                          std::to_string(codec.scale()));
    const Shape5 lat = latent_shape();
    const int64_t div = int64_t(1) << unet.depth;
    if (lat.h % div != 0 || lat.w % div != 0)
        throw ConfigError("latent extents " + lat.str() +
                          " must be divisible by 2^unet.depth = " + std::to_string(div));
    if (train_steps < 1) throw ConfigError("schedule.train_steps must be >= 1");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw ConfigError("schedule betas must satisfy 0 < beta_min <= beta_max < 1");
    if (inference_steps < 1 || inference_steps > train_steps)
        throw ConfigError("sampler.steps must lie in [1, schedule.train_steps]");
    if (guidance < 0.0) throw ConfigError("sampler.guidance must be >= 0");
    if (cache_enabled && cache_interval < 1) throw ConfigError("cache.n must be >= 1");
    if (chunk_enabled) {
        if (chunk.eta < 1 || chunk.omega < 1) throw ConfigError("chunk.eta/omega must be >= 1");
        // Chunk targets operate on level geometry; verify divisibility at the
        // coarsest targeted level.
        for (const std::string& t : chunk.targets) {
            int64_t level = 0;
            if ((t[0] == 'u' || t[0] == 'd') && t.size() > 1 && isdigit(t[1]))
                level = parse_int("chunk.targets", t.substr(1));
            else if (t == "mid")
                level = unet.depth;
            const int64_t h = lat.h >> level, w = lat.w >> level;
            if (h % chunk.eta != 0 || w % chunk.omega != 0)
                throw ConfigError("chunk target '" + t + "' extent " + std::to_string(h) + "x" +
                                  std::to_string(w) + " not divisible by eta x omega");
        }
    }
    if (budget_fast_bytes < 0) throw ConfigError("budget.fast_bytes must be >= 0");
}

bool RunConfig::is_plain_baseline() const {
    return !cache_enabled && !chunk_enabled && !slice_decode &&
           swap.mode == SwapConfig::Mode::Off;
}

RunConfig RunConfig::baseline() const {
    RunConfig b = *this;
    b.cache_enabled = false;
    b.chunk_enabled = false;
    b.slice_decode = false;
    b.swap.mode = SwapConfig::Mode::Off;
    b.budget_fast_bytes = 0;
    return b;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "run.frames") cfg.frames = parse_int(key, v);
    else if (key == "run.height") cfg.height = parse_int(key, v);
    else if (key == "run.width") cfg.width = parse_int(key, v);
    else if (key == "run.seed") cfg.seed = parse_uint(key, v);
    else if (key == "run.mode") cfg.mode = v;
    else if (key == "run.out_dir") cfg.out_dir = v;
    else if (key == "unet.depth") cfg.unet.depth = parse_int(key, v);
    else if (key == "unet.base_channels") cfg.unet.base_channels = parse_int(key, v);
    else if (key == "unet.kernel") cfg.unet.kernel = parse_int(key, v);
    else if (key == "unet.cache_depth") cfg.unet.cache_depth = parse_int(key, v);
    else if (key == "unet.weight_seed") cfg.unet.weight_seed = parse_uint(key, v);
    else if (key == "codec.latent_channels") {
        cfg.codec.latent_channels = parse_int(key, v);
        cfg.unet.in_channels = cfg.codec.latent_channels;
    } else if (key == "codec.stages") cfg.codec.upsample_stages = parse_int(key, v);
    else if (key == "codec.width") cfg.codec.width = parse_int(key, v);
    else if (key == "codec.weight_seed") cfg.codec.weight_seed = parse_uint(key, v);
    else if (key == "schedule.train_steps") cfg.train_steps = parse_int(key, v);
    else if (key == "schedule.beta_min") cfg.beta_min = parse_double(key, v);
    else if (key == "schedule.beta_max") cfg.beta_max = parse_double(key, v);
    else if (key == "sampler.kind") cfg.sampler = sampler_from_string(v);
    else if (key == "sampler.steps") cfg.inference_steps = parse_int(key, v);
    else if (key == "sampler.guidance") cfg.guidance = parse_double(key, v);
    else if (key == "cache.enabled") cfg.cache_enabled = parse_bool(key, v);
    else if (key == "cache.n") cfg.cache_interval = parse_int(key, v);
    else if (key == "swap.mode") cfg.swap.mode = swap_mode_from_string(v);
    else if (key == "swap.simulate") cfg.swap.simulate = parse_bool(key, v);
    else if (key == "swap.bandwidth") cfg.swap.bandwidth_bytes_per_s = parse_double(key, v);
    else if (key == "swap.latency") cfg.swap.latency_s = parse_double(key, v);
    else if (key == "swap.mac_rate") cfg.swap.sim_mac_rate = parse_double(key, v);
    else if (key == "chunk.enabled") cfg.chunk_enabled = parse_bool(key, v);
    else if (key == "chunk.eta") cfg.chunk.eta = parse_int(key, v);
    else if (key == "chunk.omega") cfg.chunk.omega = parse_int(key, v);
    else if (key == "chunk.halo") {
        if (v == "exact") cfg.chunk.halo = HaloMode::exact();
        else if (v == "none") cfg.chunk.halo = HaloMode::none();
        else if (v == "fixed") cfg.chunk.halo.kind = HaloMode::Kind::Fixed;
        else throw ConfigError("chunk.halo must be exact, none or fixed");
    } else if (key == "chunk.halo_px") {
        cfg.chunk.halo.fixed = parse_int(key, v);
    } else if (key == "chunk.targets") cfg.chunk.targets = split_list(v);
    else if (key == "decode.sliced") cfg.slice_decode = parse_bool(key, v);
    else if (key == "budget.fast_bytes") cfg.budget_fast_bytes = parse_int(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    RunConfig cfg = default_config();
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        lineno++;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string config_to_text(const RunConfig& cfg) {
    std::ostringstream os;
    os << "run.frames = " << cfg.frames << "\n";
    os << "run.height = " << cfg.height << "\n";
    os << "run.width = " << cfg.width << "\n";
    os << "run.seed = " << cfg.seed << "\n";
    os << "run.mode = " << cfg.mode << "\n";
    os << "run.out_dir = " << cfg.out_dir << "\n";
    os << "unet.depth = " << cfg.unet.depth << "\n";
    os << "unet.base_channels = " << cfg.unet.base_channels << "\n";
    os << "unet.kernel = " << cfg.unet.kernel << "\n";
    os << "unet.cache_depth = " << cfg.unet.cache_depth << "\n";
    os << "unet.weight_seed = " << cfg.unet.weight_seed << "\n";
    os << "codec.latent_channels = " << cfg.codec.latent_channels << "\n";
    os << "codec.stages = " << cfg.codec.upsample_stages << "\n";
    os << "codec.width = " << cfg.codec.width << "\n";
    os << "codec.weight_seed = " << cfg.codec.weight_seed << "\n";
    os << "schedule.train_steps = " << cfg.train_steps << "\n";
    os << "schedule.beta_min = " << cfg.beta_min << "\n";
    os << "schedule.beta_max = " << cfg.beta_max << "\n";
    os << "sampler.kind = " << to_string(cfg.sampler) << "\n";
    os << "sampler.steps = " << cfg.inference_steps << "\n";
    os << "sampler.guidance = " << cfg.guidance << "\n";
    os << "cache.enabled = " << (cfg.cache_enabled ? "true" : "false") << "\n";
    os << "cache.n = " << cfg.cache_interval << "\n";
    os << "swap.mode = " << to_string(cfg.swap.mode) << "\n";
    os << "swap.simulate = " << (cfg.swap.simulate ? "true" : "false") << "\n";
    os << "swap.bandwidth = " << cfg.swap.bandwidth_bytes_per_s << "\n";
    os << "swap.latency = " << cfg.swap.latency_s << "\n";
    os << "swap.mac_rate = " << cfg.swap.sim_mac_rate << "\n";
    os << "chunk.enabled = " << (cfg.chunk_enabled ? "true" : "false") << "\n";
    os << "chunk.eta = " << cfg.chunk.eta << "\n";
    os << "chunk.omega = " << cfg.chunk.omega << "\n";
    os << "chunk.halo = " << halo_to_string(cfg.chunk.halo) << "\n";
    os << "chunk.halo_px = " << cfg.chunk.halo.fixed << "\n";
    os << "chunk.targets = " << join(cfg.chunk.targets) << "\n";
    os << "decode.sliced = " << (cfg.slice_decode ? "true" : "false") << "\n";
    os << "budget.fast_bytes = " << cfg.budget_fast_bytes << "\n";
    return os.str();
}

std::string config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["run"] = {{"frames", cfg.frames}, {"height", cfg.height},      {"width", cfg.width},
                {"seed", cfg.seed},     {"mode", cfg.mode},          {"out_dir", cfg.out_dir}};
    j["unet"] = {{"depth", cfg.unet.depth},
                 {"base_channels", cfg.unet.base_channels},
                 {"kernel", cfg.unet.kernel},
                 {"cache_depth", cfg.unet.cache_depth},
                 {"weight_seed", cfg.unet.weight_seed}};
    j["codec"] = {{"latent_channels", cfg.codec.latent_channels},
                  {"stages", cfg.codec.upsample_stages},
                  {"width", cfg.codec.width},
                  {"weight_seed", cfg.codec.weight_seed}};
    j["schedule"] = {{"train_steps", cfg.train_steps},
                     {"beta_min", cfg.beta_min},
                     {"beta_max", cfg.beta_max}};
    j["sampler"] = {{"kind", to_string(cfg.sampler)},
                    {"steps", cfg.inference_steps},
                    {"guidance", cfg.guidance}};
    j["cache"] = {{"enabled", cfg.cache_enabled}, {"n", cfg.cache_interval}};
    j["swap"] = {{"mode", to_string(cfg.swap.mode)},
                 {"simulate", cfg.swap.simulate},
                 {"bandwidth", cfg.swap.bandwidth_bytes_per_s},
                 {"latency", cfg.swap.latency_s},
                 {"mac_rate", cfg.swap.sim_mac_rate}};
    j["chunk"] = {{"enabled", cfg.chunk_enabled},
                  {"eta", cfg.chunk.eta},
                  {"omega", cfg.chunk.omega},
                  {"halo", halo_to_string(cfg.chunk.halo)},
                  {"halo_px", cfg.chunk.halo.fixed},
                  {"targets", cfg.chunk.targets}};
    j["decode"] = {{"sliced", cfg.slice_decode}};
    j["budget"] = {{"fast_bytes", cfg.budget_fast_bytes}};
    return j.dump();
}

}  // namespace stagecache
