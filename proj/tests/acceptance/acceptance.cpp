// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Criteria 4 and 5 drive the itcfn binary end to end; expect roughly half an
// hour on one core.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "itcfn/verify/suite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string bytes_of(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(ITCFN_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p) << text;
}

json report(const fs::path& p) { return json::parse(bytes_of(p)); }

double mean_of(const json& r, const char* metric) { return r["aggregate"][metric]["mean"].get<double>(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome suite_group(const std::vector<itcfn::verify::Check>& checks, const std::string& group) {
    Outcome o{true, ""};
    std::size_t n = 0;
    for (const auto& c : checks) {
        if (c.group != group) continue;
        ++n;
        if (!c.passed) {
            o.passed = false;
            o.detail += "[" + c.name + ": " + c.detail + "] ";
        }
    }
    if (n == 0) o.passed = false;
    if (o.passed) o.detail = std::to_string(n) + " checks";
    return o;
}

}  // namespace

int main() {
    const fs::path root = fs::path(ACCEPTANCE_DIR);
    fs::remove_all(root);
    fs::create_directories(root);
    std::vector<std::pair<std::string, Outcome>> lines;
    auto emit = [&lines](const std::string& name, const Outcome& o) {
        std::printf("%s criterion %s -- %s\n", o.passed ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        lines.emplace_back(name, o);
    };

    // 1-3, 6: property suite.
    const auto t0 = std::chrono::steady_clock::now();
    const auto checks = itcfn::verify::run_suite();
    const double suite_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Outcome grad = suite_group(checks, "gradient");
    grad.detail += ", whole suite " + fmt("%.1f", suite_s) + " s";
    if (suite_s >= 120.0) grad.passed = false;
    emit("1 (gradient suite)", grad);
    emit("2 (oracle equivalences)", suite_group(checks, "oracle"));
    emit("3 (loss identities)", suite_group(checks, "identity"));

    // 4: determinism of cmd_cv and MMG checksum under stage 2.
    {
        const fs::path cfg = root / "det" / "config.json";
        write(cfg, R"({
  "cohort": {"n_subjects": 40, "seed": 3},
  "train": {"epochs_stage1": 3, "epochs_stage2": 3, "seed": 3}
})");
        Outcome o{true, ""};
        const int a = cli("cv --config " + cfg.string() + " --out " + (root / "det" / "a").string(), root / "det" / "a.log");
        const int b = cli("cv --config " + cfg.string() + " --out " + (root / "det" / "b").string(), root / "det" / "b.log");
        const int p = cli("cv --config " + cfg.string() + " --parallel-folds 2 --out " + (root / "det" / "p").string(),
                          root / "det" / "p.log");
        if (a != 0 || b != 0 || p != 0) {
            o = {false, "cv exit codes " + std::to_string(a) + "/" + std::to_string(b) + "/" + std::to_string(p)};
        } else {
            const std::string ja = bytes_of(root / "det" / "a" / "mmg_tcaf.json");
            const bool same = !ja.empty() && ja == bytes_of(root / "det" / "b" / "mmg_tcaf.json") &&
                              ja == bytes_of(root / "det" / "p" / "mmg_tcaf.json");
            std::size_t folds = 0, stable = 0;
            const json parsed = json::parse(ja);
            for (const auto& f : parsed["folds"]) {
                ++folds;
                stable += f["mmg_checksum_before"] == f["mmg_checksum_after"] && !f["mmg_checksum_before"].get<std::string>().empty();
            }
            o.passed = same && folds == 5 && stable == folds;
            o.detail = std::string(same ? "identical" : "DIFFERENT") + " metrics JSON across 2 serial + 1 parallel run; MMG checksum unchanged in " +
                       std::to_string(stable) + "/" + std::to_string(folds) + " folds";
        }
        emit("4 (determinism)", o);
    }

    // 5a, 5b: default cohort, full model.
    {
        const fs::path out = root / "desk";
        const auto t = std::chrono::steady_clock::now();
        const int code = cli("cv --ablation mmg_tcaf --out " + out.string(), root / "desk.log");
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
        Outcome a{false, "cv exit code " + std::to_string(code)}, b = a;
        if (code == 0) {
            const json r = report(out / "mmg_tcaf.json");
            double mse = 0, base = 0;
            std::size_t beats = 0, n = 0;
            for (const auto& f : r["folds"]) {
                mse += f["pet_mse"]["model"].get<double>();
                base += f["pet_mse"]["mean_baseline"].get<double>();
                beats += f["pet_mse"]["model"].get<double>() < f["pet_mse"]["mean_baseline"].get<double>();
                ++n;
            }
            a.passed = n == 5 && mse < base;
            a.detail = "held-out PET MSE " + fmt("%.4f", mse / n) + " vs mean predictor " + fmt("%.4f", base / n) +
                       " (better in " + std::to_string(beats) + "/" + std::to_string(n) + " folds)";
            const double auc = mean_of(r, "auc"), acc = mean_of(r, "acc");
            b.passed = n == 5 && auc >= 0.85 && acc >= 0.80;
            b.detail = "MMG+TCAF mean AUC " + fmt("%.4f", auc) + " (>= 0.85), mean ACC " + fmt("%.4f", acc) +
                       " (>= 0.80), 5-fold wall time " + fmt("%.0f", secs) + " s";
        }
        emit("5a (stage-1 PET MSE beats mean predictor)", a);
        emit("5b (desk-scale AUC/ACC)", b);
    }

    // 5c: ablation at missing_pet_rate 0.5 over three seeds.
    {
        double none = 0, tcaf = 0, mmg_tcaf = 0, mmg_only = 0;
        Outcome o{true, ""};
        std::string per_seed;
        for (int seed = 1; seed <= 3; ++seed) {
            const fs::path dir = root / ("ablation_seed" + std::to_string(seed));
            write(dir / "config.json", "{\"cohort\": {\"missing_pet_rate\": 0.5, \"seed\": " + std::to_string(seed) +
                                           "}, \"train\": {\"seed\": " + std::to_string(seed) + "}}");
            const int code = cli("cv --ablation all --config " + (dir / "config.json").string() + " --out " + dir.string(),
                                 dir / "cv.log");
            if (code != 0) {
                o = {false, "cv exit code " + std::to_string(code) + " for seed " + std::to_string(seed)};
                break;
            }
            const double n = mean_of(report(dir / "none.json"), "auc"), t = mean_of(report(dir / "tcaf_only.json"), "auc"),
                         m = mean_of(report(dir / "mmg_tcaf.json"), "auc"), mo = mean_of(report(dir / "mmg_only.json"), "auc");
            none += n / 3;
            tcaf += t / 3;
            mmg_tcaf += m / 3;
            mmg_only += mo / 3;
            per_seed += " seed" + std::to_string(seed) + "[none " + fmt("%.3f", n) + ", mmg_only " + fmt("%.3f", mo) +
                        ", tcaf_only " + fmt("%.3f", t) + ", mmg_tcaf " + fmt("%.3f", m) + "]";
        }
        if (o.passed) {
            const bool mmg_ok = mmg_tcaf >= tcaf - 0.02;
            const bool tcaf_ok = std::min(tcaf, mmg_tcaf) >= none + 0.02;
            o.passed = mmg_ok && tcaf_ok;
            o.detail = "mean AUC none " + fmt("%.4f", none) + ", mmg_only " + fmt("%.4f", mmg_only) + ", tcaf_only " +
                       fmt("%.4f", tcaf) + ", mmg_tcaf " + fmt("%.4f", mmg_tcaf) + "; MMG+TCAF >= TCAF-only - 0.02: " +
                       (mmg_ok ? "yes" : "no") + "; TCAF modes >= None + 0.02: " + (tcaf_ok ? "yes" : "no") + ";" + per_seed;
        }
        emit("5c (ablation direction)", o);
    }

    emit("6 (format contracts)", suite_group(checks, "format"));

    std::size_t failed = 0;
    for (const auto& [name, o] : lines) failed += !o.passed;
    std::printf("%zu criteria, %zu failed\n", lines.size(), failed);
    return failed == 0 ? 0 : 1;
}
