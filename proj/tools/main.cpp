#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "itcfn/config.hpp"
#include "itcfn/trainer.hpp"
#include "itcfn/verify/suite.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace itcfn;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;
};

RunConfig load(const Common& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
    if (!c.out.empty()) cfg.output_dir = c.out;
    return cfg;
}

std::vector<SubjectRecord> dataset(const Common& c, const RunConfig& cfg) {
    if (!c.data.empty()) return load_cohort(c.data);
    return synthesize_cohort(cfg.cohort);
}

void write_text(const fs::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cmd_gen(const Common& c, bool print_defaults) {
    if (print_defaults) {
        std::cout << run_config_to_json(RunConfig{});
        return 0;
    }
    RunConfig cfg = load(c);
    if (c.seed) cfg.cohort.seed = *c.seed;
    cfg.validate();
    const fs::path out = cfg.output_dir;
    const auto summary = generate_cohort(cfg.cohort, out);
    write_text(out / "config.json", run_config_to_json(cfg));
    std::cout << "wrote " << summary.n_subjects << " subjects (" << summary.n_pmci << " pMCI, " << summary.n_smci
              << " sMCI, " << summary.n_missing_pet << " without PET) to " << out.string() << "\n"
              << "config_hash " << config_hash(cfg) << " seed " << cfg.cohort.seed << "\n";
    return 0;
}

int cmd_train_mmg(const Common& c) {
    RunConfig cfg = load(c);
    if (c.seed) cfg.train.seed = *c.seed;
    cfg.validate();
    const auto subjects = dataset(c, cfg);
    std::vector<const SubjectRecord*> all;
    for (const auto& s : subjects) all.push_back(&s);
    mmg::MmgModel model(cfg.mmg_config(train::mmg_seed(cfg.train.seed, 0)));
    const auto r = train::train_mmg(model, all, cfg.train);
    const fs::path out = cfg.output_dir;
    const std::string hash = config_hash(cfg);
    train::write_mmg_curve(out / "mmg_loss.csv", r, hash, cfg.train.seed);
    model.save(out / "mmg.itck", train::run_info_json(hash, cfg.train.seed));
    const auto& first = r.curve.front();
    const auto& last = r.curve.back();
    std::printf("trained on %zu PET-complete subjects, %zu epochs; L1 %.5f -> %.5f; total %.5f -> %.5f\n", r.n_train,
                r.curve.size(), first.l1, last.l1, first.total, last.total);
    std::cout << "config_hash " << hash << " seed " << cfg.train.seed << "\n";
    return 0;
}

int cmd_train_fusion(const Common& c, const std::string& mmg_path) {
    RunConfig cfg = load(c);
    if (c.seed) cfg.train.seed = *c.seed;
    cfg.validate();
    std::optional<mmg::MmgModel> gen;
    if (!mmg_path.empty()) {
        gen.emplace(mmg::MmgModel::from_checkpoint(mmg_path));
        if (gen->config().volume_shape != cfg.cohort.volume_shape)
            throw CheckpointError("MMG checkpoint volume shape does not match cohort.volume_shape");
    }
    cfg.ablation.use_mmg = gen.has_value();
    const auto subjects = dataset(c, cfg);
    std::vector<const SubjectRecord*> all;
    for (const auto& s : subjects) all.push_back(&s);
    Standardizer standardizer;
    standardizer.fit(all);
    const auto set = train::prepare_set(all, gen ? &*gen : nullptr);
    FusionModel model(cfg.fusion_config(train::fusion_seed(cfg.train.seed, 0)));
    const auto r = train::train_fusion(model, set, standardizer, cfg.loss, cfg.train);
    const fs::path out = cfg.output_dir;
    const std::string hash = config_hash(cfg);
    train::write_fusion_curve(out / "fusion_loss.csv", r, hash, cfg.train.seed);
    model.save(out / "fusion.itck", train::run_info_json(hash, cfg.train.seed));
    std::printf("trained fusion (%s) on %zu subjects; total loss %.5f -> %.5f\n", ablation_name(cfg.ablation).c_str(),
                set.size(), r.curve.front().total, r.curve.back().total);
    std::cout << "config_hash " << hash << " seed " << cfg.train.seed << "\n";
    return 0;
}

std::vector<AblationFlags> modes_for(const std::string& ablation, const RunConfig& cfg) {
    if (ablation.empty()) return {cfg.ablation};
    if (ablation == "all")
        return {ablation_from_name("none"), ablation_from_name("mmg_only"), ablation_from_name("tcaf_only"),
                ablation_from_name("mmg_tcaf")};
    return {ablation_from_name(ablation)};
}

// Runs each fold in its own process, at most `jobs` at a time.
void spawn_folds(const std::string& self, const fs::path& config_file, const std::string& ablation,
                 const std::string& data, const fs::path& out, std::size_t k, std::size_t jobs) {
    std::vector<std::pair<pid_t, std::size_t>> running;
    std::vector<std::size_t> failed;
    auto reap_one = [&] {
        int status = 0;
        const pid_t pid = waitpid(-1, &status, 0);
        for (auto it = running.begin(); it != running.end(); ++it) {
            if (it->first != pid) continue;
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failed.push_back(it->second);
            running.erase(it);
            break;
        }
    };
    for (std::size_t fold = 0; fold < k; ++fold) {
        while (running.size() >= jobs) reap_one();
        std::vector<std::string> args = {self, "cv", "--config", config_file.string(), "--out", out.string(),
                                         "--fold", std::to_string(fold),
                                         "--fold-out", (out / "folds" / ("fold_" + std::to_string(fold) + ".json")).string()};
        if (!ablation.empty()) args.insert(args.end(), {"--ablation", ablation});
        if (!data.empty()) args.insert(args.end(), {"--data", data});
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        argv.push_back(nullptr);
        pid_t pid = 0;
        if (posix_spawn(&pid, self.c_str(), nullptr, nullptr, argv.data(), environ) != 0)
            throw std::runtime_error("could not start fold process " + std::to_string(fold));
        running.emplace_back(pid, fold);
    }
    while (!running.empty()) reap_one();
    if (!failed.empty()) throw std::runtime_error("fold process " + std::to_string(failed.front()) + " failed");
}

std::string fold_bundle(const std::vector<train::FoldResult>& results) {
    std::string s;
    for (const auto& r : results) s += train::fold_result_to_json(r) + "\x1e\n";
    return s;
}

std::vector<train::FoldResult> parse_bundle(const std::string& text) {
    std::vector<train::FoldResult> out;
    std::size_t start = 0;
    for (std::size_t p; (p = text.find('\x1e', start)) != std::string::npos; start = p + 2)
        out.push_back(train::fold_result_from_json(text.substr(start, p - start)));
    return out;
}

int cmd_cv(const Common& c, const std::string& ablation, std::size_t parallel, std::optional<std::size_t> fold,
           const std::string& fold_out) {
    RunConfig cfg = load(c);
    if (c.seed) cfg.train.seed = *c.seed;
    cfg.validate();
    const auto modes = modes_for(ablation, cfg);
    const fs::path out = cfg.output_dir;
    const auto subjects = dataset(c, cfg);

    if (fold) {
        // Worker: one fold, results to fold_out.
        const auto results = train::run_fold(subjects, cfg, *fold, modes, out);
        write_text(fold_out, fold_bundle(results));
        return 0;
    }

    std::vector<std::vector<train::FoldResult>> per_mode(modes.size());
    if (parallel > 1) {
        const fs::path resolved = out / "folds" / "config.json";
        write_text(resolved, run_config_to_json(cfg));
        const std::string self = fs::read_symlink("/proc/self/exe").string();
        spawn_folds(self, resolved, ablation, c.data, out, cfg.train.k_folds, parallel);
        for (std::size_t k = 0; k < cfg.train.k_folds; ++k) {
            const auto results = parse_bundle(read_text(out / "folds" / ("fold_" + std::to_string(k) + ".json")));
            if (results.size() != modes.size()) throw std::runtime_error("fold " + std::to_string(k) + " result is incomplete");
            for (std::size_t m = 0; m < modes.size(); ++m) per_mode[m].push_back(results[m]);
        }
    } else {
        for (std::size_t k = 0; k < cfg.train.k_folds; ++k) {
            // Same serialization path as the parallel workers.
            const auto results = parse_bundle(fold_bundle(train::run_fold(subjects, cfg, k, modes, out)));
            for (std::size_t m = 0; m < modes.size(); ++m) per_mode[m].push_back(results[m]);
            std::fprintf(stderr, "fold %zu/%zu done\n", k + 1, cfg.train.k_folds);
        }
    }
    for (std::size_t m = 0; m < modes.size(); ++m) {
        const auto report = train::make_report(cfg, modes[m], subjects.size(), per_mode[m]);
        write_text(out / (report.mode + ".json"), train::report_to_json(report));
        double auc = 0, acc = 0;
        for (const auto& f : report.folds) {
            auc += f.auc;
            acc += f.confusion.acc;
        }
        const double k = static_cast<double>(report.folds.size());
        std::printf("%-10s mean AUC %.4f  mean ACC %.4f  config_hash %s  -> %s\n", report.mode.c_str(), auc / k,
                    acc / k, report.config_hash.c_str(), (out / (report.mode + ".json")).string().c_str());
    }
    return 0;
}

int cmd_verify(const std::string& mutate) {
    const auto mutation = verify::mutation_from_name(mutate);
    const auto checks = verify::run_suite(mutation);
    std::size_t failed = 0;
    std::printf("%-4s %-10s %-58s %s\n", "", "group", "check", "detail");
    for (const auto& ch : checks) {
        std::printf("%-4s %-10s %-58s %s\n", ch.passed ? "PASS" : "FAIL", ch.group.c_str(), ch.name.c_str(),
                    ch.detail.c_str());
        if (!ch.passed) ++failed;
    }
    std::printf("%zu checks, %zu failed\n", checks.size(), failed);
    for (const auto& ch : checks)
        if (!ch.passed) std::printf("FAILED: %s\n", ch.name.c_str());
    return failed == 0 ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage multimodal MCI conversion classifier on synthetic cohorts"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&common](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON run config (missing keys take defaults)");
        sub->add_option("--seed", common.seed, "Seed override (cohort seed for gen, training seed otherwise)");
        sub->add_option("--out", common.out, "Output directory (overrides output_dir)");
    };

    bool print_defaults = false;
    auto* gen = app.add_subcommand("gen", "Generate a synthetic cohort");
    add_common(gen);
    gen->add_flag("--print-defaults", print_defaults, "Print the full default config and exit");

    auto* tmmg = app.add_subcommand("train-mmg", "Stage 1: train the MRI-to-PET generator");
    add_common(tmmg);
    tmmg->add_option("--data", common.data, "Cohort directory from gen (default: synthesize in memory)");

    std::string mmg_path;
    auto* tfus = app.add_subcommand("train-fusion", "Stage 2: train encoders, fusion and classifier");
    add_common(tfus);
    tfus->add_option("--data", common.data, "Cohort directory from gen (default: synthesize in memory)");
    tfus->add_option("--mmg", mmg_path, "Stage-1 checkpoint; without it missing PET is zero-filled");

    std::string ablation;
    std::size_t parallel = 1;
    std::optional<std::size_t> fold;
    std::string fold_out;
    auto* cv = app.add_subcommand("cv", "k-fold cross-validation, one metrics JSON per ablation mode");
    add_common(cv);
    cv->add_option("--data", common.data, "Cohort directory from gen (default: synthesize in memory)");
    cv->add_option("--ablation", ablation, "none, mmg_only, tcaf_only, mmg_tcaf or all (default: config flags)")
        ->check(CLI::IsMember({"none", "mmg_only", "tcaf_only", "mmg_tcaf", "all"}));
    cv->add_option("--parallel-folds", parallel, "Run folds as this many concurrent processes")
        ->check(CLI::PositiveNumber);
    cv->add_option("--fold", fold)->group("");
    cv->add_option("--fold-out", fold_out)->group("");

    std::string mutate;
    auto* ver = app.add_subcommand("verify", "Run the property suite and print a pass/fail table");
    ver->add_option("--mutate", mutate, "Inject a known defect: focal-sign")
        ->check(CLI::IsMember({"focal-sign"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gen) return cmd_gen(common, print_defaults);
        if (*tmmg) return cmd_train_mmg(common);
        if (*tfus) return cmd_train_fusion(common, mmg_path);
        if (*cv) {
            if (fold && fold_out.empty()) throw ConfigError("--fold requires --fold-out");
            return cmd_cv(common, ablation, parallel, fold, fold_out);
        }
        if (*ver) return cmd_verify(mutate);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitFailure;
}
