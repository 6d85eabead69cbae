#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include <CLI11.hpp>

#include "stagecache/pipeline.hpp"

namespace {

using namespace stagecache;

RunConfig build_config(const std::string& config_path,
                       const std::vector<std::string>& overrides,
                       const std::string& out_dir_flag) {
    RunConfig cfg = config_path.empty() ? default_config() : load_config_file(config_path);
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!out_dir_flag.empty()) cfg.out_dir = out_dir_flag;
    return cfg;
}

std::vector<int64_t> parse_n_list(const std::string& s) {
    std::vector<int64_t> ns;
    std::stringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (item.empty()) continue;
        ns.push_back(std::stoll(item));
    }
    if (ns.empty()) throw ConfigError("--n expects a comma-separated list such as 1,2,4");
    return ns;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << text << "\n";
}

void print_peaks(const RunResult& r) {
    std::printf("%-8s %14s %14s\n", "stage", "fast peak (B)", "slow peak (B)");
    for (int s = 0; s < 4; ++s) {
        const auto tag = static_cast<StageTag>(s);
        std::printf("%-8s %14lld %14lld\n", to_string(tag),
                    static_cast<long long>(r.mem.peak[s][0]),
                    static_cast<long long>(r.mem.peak[s][1]));
    }
}

int cmd_run(const RunConfig& cfg) {
    RunResult r = run_pipeline(cfg);
    write_run_artifacts(r, cfg.out_dir);
    std::printf("run complete: %lld frames, wall %.3fs (denoise %.3fs, decode %.3fs)\n",
                static_cast<long long>(r.video.shape().t), r.wall.total, r.wall.denoise,
                r.wall.decode);
    std::printf("denoiser MACs %lld (%lld full + %lld cached steps)\n",
                static_cast<long long>(r.denoiser_macs), static_cast<long long>(r.full_steps),
                static_cast<long long>(r.cached_steps));
    print_peaks(r);
    std::printf("artifacts written to %s\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_compare(const RunConfig& cfg) {
    const CompareRow row = compare(cfg.baseline(), cfg);
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir + "/compare.json", compare_row_json(row));
    std::printf("%-10s %-8s %-8s %-10s\n", "speed_up", "psnr", "ssim", "identical");
    std::printf("%-10.3f %-8.3f %-8.4f %-10s\n", row.speed_up, row.psnr_mean, row.ssim_mean,
                row.identical_video ? "yes" : "no");
    std::printf("wrote %s/compare.json\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    const AblationTable table = ablate(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir + "/ablate.json", ablation_table_json(table));
    std::printf("%-12s %-8s %-8s %-8s %12s %12s %12s\n", "row", "time(s)", "psnr", "ssim",
                "encode(B)", "denoise(B)", "decode(B)");
    for (const AblationRow& r : table.rows)
        std::printf("%-12s %-8.3f %-8.3f %-8.4f %12lld %12lld %12lld\n", r.label.c_str(),
                    r.wall_total, r.psnr_mean, r.ssim_mean,
                    static_cast<long long>(r.peak_fast[1]),
                    static_cast<long long>(r.peak_fast[2]),
                    static_cast<long long>(r.peak_fast[3]));
    std::printf("wrote %s/ablate.json\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::string& n_list) {
    const SweepTable table = sweep_n(cfg, parse_n_list(n_list));
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir + "/sweep.json", sweep_table_json(table));
    std::printf("%-4s %-10s %-8s %-8s %14s\n", "N", "speed_up", "psnr", "ssim", "macs");
    for (const SweepRow& r : table.rows)
        std::printf("%-4lld %-10.3f %-8.3f %-8.4f %14lld\n", static_cast<long long>(r.n),
                    r.speed_up, r.psnr_mean, r.ssim_mean, static_cast<long long>(r.macs));
    if (!table.quality_monotone)
        std::printf("note: quality trend is not monotone over the requested Ns\n");
    std::printf("wrote %s/sweep.json\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_export_plots(const RunConfig& cfg, const std::string& n_list) {
    const auto ns = parse_n_list(n_list);
    export_plots(cfg, ns, cfg.out_dir);
    for (int64_t n : ns)
        std::printf("wrote %s/metrics_n%lld.csv\n", cfg.out_dir.c_str(),
                    static_cast<long long>(n));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Staged latent-diffusion inference engine with feature caching, tier "
                 "swapping, spatial chunking and sliced decoding"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string n_list = "1,2,3,4,8";

    app.add_option("--config", config_path, "Key-value config file")->capture_default_str();
    app.add_option("--set", overrides, "Override config keys (key=value, repeatable)");
    app.add_option("--out", out_dir, "Output directory (overrides run.out_dir)");

    auto* run = app.add_subcommand("run", "Execute one pipeline run and write artifacts");
    auto* cmp = app.add_subcommand("compare",
                                   "Run the cache-off baseline and this config, compare");
    auto* abl = app.add_subcommand("ablate", "Run {all-on, -swap, -slice, -chunk, cache-only}");
    auto* swp = app.add_subcommand("sweep-n", "Sweep the cache interval N");
    swp->add_option("--n", n_list, "Comma-separated N values")->capture_default_str();
    auto* exp = app.add_subcommand("export-plots", "Per-frame metric CSVs vs the baseline");
    exp->add_option("--n", n_list, "Comma-separated N values")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        const stagecache::RunConfig cfg = build_config(config_path, overrides, out_dir);
        if (run->parsed()) return cmd_run(cfg);
        if (cmp->parsed()) return cmd_compare(cfg);
        if (abl->parsed()) return cmd_ablate(cfg);
        if (swp->parsed()) return cmd_sweep(cfg, n_list);
        if (exp->parsed()) return cmd_export_plots(cfg, n_list);
    } catch (const stagecache::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const stagecache::BudgetError& e) {
        std::cerr << "budget abort: " << e.what() << "\n";
        return 3;
    } catch (const stagecache::InvariantError& e) {
        std::cerr << "invariant failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
