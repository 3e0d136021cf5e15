#include "itcfn/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace itcfn {

using nlohmann::ordered_json;

void TrainConfig::validate() const {
    if (epochs_stage1 == 0) throw ConfigError("train.epochs_stage1 must be >= 1");
    if (epochs_stage2 == 0) throw ConfigError("train.epochs_stage2 must be >= 1");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be > 0");
    if (k_folds < 2) throw ConfigError("train.k_folds must be >= 2");
}

mmg::MmgConfig RunConfig::mmg_config(std::uint64_t seed) const {
    mmg::MmgConfig c;
    c.volume_shape = cohort.volume_shape;
    c.codebook_size = codebook_size;
    c.code_dim = code_dim;
    c.commitment_beta = commitment_beta;
    c.weights = mmg_weights;
    c.seed = seed;
    return c;
}

FusionConfig RunConfig::fusion_config(std::uint64_t seed) const {
    FusionConfig c;
    c.encoder.volume_shape = cohort.volume_shape;
    c.encoder.tokens = tokens;
    c.encoder.token_dim = token_dim;
    c.encoder.heads = heads;
    c.key_dim = key_dim;
    c.classifier_hidden = classifier_hidden;
    c.use_tcaf = ablation.use_tcaf;
    c.seed = seed;
    return c;
}

void RunConfig::validate() const {
    auto rethrow = [](const char* section, auto&& fn) {
        try {
            fn();
        } catch (const ConfigError&) {
            throw;
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string(section) + ": " + e.what());
        }
    };
    rethrow("cohort", [&] { cohort.validate(); });
    train.validate();
    if (train.k_folds > cohort.n_subjects)
        throw ConfigError("train.k_folds (" + std::to_string(train.k_folds) + ") exceeds cohort.n_subjects (" +
                          std::to_string(cohort.n_subjects) + ")");
    rethrow("loss", [&] { loss.validate(); });
    rethrow("mmg", [&] { mmg_config(0).validate(); });
    rethrow("fusion", [&] { fusion_config(0).validate(); });
}

std::string ablation_name(const AblationFlags& f) {
    if (f.use_mmg) return f.use_tcaf ? "mmg_tcaf" : "mmg_only";
    return f.use_tcaf ? "tcaf_only" : "none";
}

AblationFlags ablation_from_name(const std::string& name) {
    if (name == "none") return {false, false};
    if (name == "mmg_only") return {true, false};
    if (name == "tcaf_only") return {false, true};
    if (name == "mmg_tcaf") return {true, true};
    throw ConfigError("unknown ablation mode '" + name + "' (expected none, mmg_only, tcaf_only, mmg_tcaf)");
}

namespace {

ordered_json to_tree(const RunConfig& c, bool with_output) {
    ordered_json j;
    j["cohort"] = {{"n_subjects", c.cohort.n_subjects},
                   {"volume_shape", c.cohort.volume_shape},
                   {"missing_pet_rate", c.cohort.missing_pet_rate},
                   {"pmci_fraction", c.cohort.pmci_fraction},
                   {"noise_sigma", c.cohort.noise_sigma},
                   {"seed", c.cohort.seed},
                   {"label_correlated_missing", c.cohort.label_correlated_missing}};
    j["train"] = {{"epochs_stage1", c.train.epochs_stage1}, {"epochs_stage2", c.train.epochs_stage2},
                  {"batch_size", c.train.batch_size},       {"lr", c.train.lr},
                  {"seed", c.train.seed},                   {"k_folds", c.train.k_folds}};
    ordered_json alpha = c.loss.alpha_from_frequency ? ordered_json("inverse_frequency") : ordered_json(c.loss.alpha_focal);
    j["loss"] = {{"gamma", c.loss.gamma},   {"alpha_focal", alpha},           {"tau", c.loss.tau},
                 {"lambda", c.loss.lambda}, {"alpha_total", c.loss.alpha_total}, {"eps", c.loss.eps}};
    j["mmg"] = {{"codebook_size", c.codebook_size},
                {"code_dim", c.code_dim},
                {"commitment_beta", c.commitment_beta},
                {"weights",
                 {{"l1", c.mmg_weights.l1},
                  {"quantization", c.mmg_weights.quantization},
                  {"perceptual", c.mmg_weights.perceptual},
                  {"adversarial", c.mmg_weights.adversarial}}}};
    j["fusion"] = {{"tokens", c.tokens},
                   {"token_dim", c.token_dim},
                   {"heads", c.heads},
                   {"key_dim", c.key_dim},
                   {"classifier_hidden", c.classifier_hidden}};
    j["ablation"] = {{"use_mmg", c.ablation.use_mmg}, {"use_tcaf", c.ablation.use_tcaf}};
    if (with_output) j["output_dir"] = c.output_dir;
    return j;
}

// Reads json objects against a template tree, rejecting keys the template lacks.
class Reader {
public:
    explicit Reader(const nlohmann::json& root) : root_(root) {}

    void check_keys(const nlohmann::json& node, const ordered_json& tmpl, const std::string& path) const {
        if (!node.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + " must be an object");
        for (const auto& [key, value] : node.items()) {
            const std::string here = path.empty() ? key : path + "." + key;
            if (!tmpl.contains(key)) throw ConfigError("unknown config key '" + here + "'");
            if (tmpl[key].is_object()) check_keys(value, tmpl[key], here);
        }
    }

    template <class T>
    void get(const char* section, const char* key, T& out) const {
        const nlohmann::json* node = &root_;
        std::string path;
        if (section) {
            if (!root_.contains(section)) return;
            node = &root_[section];
            path = std::string(section) + ".";
        }
        if (!node->contains(key)) return;
        try {
            out = (*node)[key].template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config key '" + path + key + "' has the wrong type: " + (*node)[key].dump());
        }
    }

private:
    const nlohmann::json& root_;
};

template <class T>
void get_unsigned(const Reader& r, const char* section, const char* key, T& out, const nlohmann::json& root) {
    if (section && root.contains(section) && root[section].contains(key)) {
        const auto& v = root[section][key];
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            throw ConfigError(std::string("config key '") + section + "." + key + "' must be a non-negative integer");
    }
    r.get(section, key, out);
}

}  // namespace

std::string run_config_to_json(const RunConfig& config) { return to_tree(config, true).dump(2) + "\n"; }

RunConfig run_config_from_json(const std::string& text) {
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    const ordered_json tmpl = to_tree(c, true);
    Reader r(root);
    r.check_keys(root, tmpl, "");

    get_unsigned(r, "cohort", "n_subjects", c.cohort.n_subjects, root);
    r.get("cohort", "volume_shape", c.cohort.volume_shape);
    r.get("cohort", "missing_pet_rate", c.cohort.missing_pet_rate);
    r.get("cohort", "pmci_fraction", c.cohort.pmci_fraction);
    r.get("cohort", "noise_sigma", c.cohort.noise_sigma);
    get_unsigned(r, "cohort", "seed", c.cohort.seed, root);
    r.get("cohort", "label_correlated_missing", c.cohort.label_correlated_missing);

    get_unsigned(r, "train", "epochs_stage1", c.train.epochs_stage1, root);
    get_unsigned(r, "train", "epochs_stage2", c.train.epochs_stage2, root);
    get_unsigned(r, "train", "batch_size", c.train.batch_size, root);
    r.get("train", "lr", c.train.lr);
    get_unsigned(r, "train", "seed", c.train.seed, root);
    get_unsigned(r, "train", "k_folds", c.train.k_folds, root);

    r.get("loss", "gamma", c.loss.gamma);
    if (root.contains("loss") && root["loss"].contains("alpha_focal")) {
        const auto& a = root["loss"]["alpha_focal"];
        if (a.is_string() && a.get<std::string>() == "inverse_frequency") {
            c.loss.alpha_from_frequency = true;
        } else if (a.is_array() && a.size() == 2 && a[0].is_number() && a[1].is_number()) {
            c.loss.alpha_from_frequency = false;
            c.loss.alpha_focal = {a[0].get<double>(), a[1].get<double>()};
        } else {
            throw ConfigError("config key 'loss.alpha_focal' must be \"inverse_frequency\" or [alpha_0, alpha_1]");
        }
    }
    r.get("loss", "tau", c.loss.tau);
    r.get("loss", "lambda", c.loss.lambda);
    r.get("loss", "alpha_total", c.loss.alpha_total);
    r.get("loss", "eps", c.loss.eps);

    get_unsigned(r, "mmg", "codebook_size", c.codebook_size, root);
    get_unsigned(r, "mmg", "code_dim", c.code_dim, root);
    r.get("mmg", "commitment_beta", c.commitment_beta);
    if (root.contains("mmg") && root["mmg"].contains("weights")) {
        const Reader w(root["mmg"]);
        w.get("weights", "l1", c.mmg_weights.l1);
        w.get("weights", "quantization", c.mmg_weights.quantization);
        w.get("weights", "perceptual", c.mmg_weights.perceptual);
        w.get("weights", "adversarial", c.mmg_weights.adversarial);
    }

    get_unsigned(r, "fusion", "tokens", c.tokens, root);
    get_unsigned(r, "fusion", "token_dim", c.token_dim, root);
    get_unsigned(r, "fusion", "heads", c.heads, root);
    get_unsigned(r, "fusion", "key_dim", c.key_dim, root);
    get_unsigned(r, "fusion", "classifier_hidden", c.classifier_hidden, root);

    r.get("ablation", "use_mmg", c.ablation.use_mmg);
    r.get("ablation", "use_tcaf", c.ablation.use_tcaf);
    r.get(nullptr, "output_dir", c.output_dir);

    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return run_config_from_json(ss.str());
}

std::string config_hash(const RunConfig& config) {
    const std::string canon = to_tree(config, false).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : canon) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

}  // namespace itcfn
