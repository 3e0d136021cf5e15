#include "itcfn/fusion.hpp"

#include <stdexcept>

#include <json.hpp>

namespace itcfn {

void FusionConfig::validate() const {
    encoder.validate();
    if (key_dim == 0) throw std::invalid_argument("key_dim must be >= 1");
    if (classifier_hidden == 0) throw std::invalid_argument("classifier_hidden must be >= 1");
}

namespace {

const FusionConfig& validated(const FusionConfig& c) {
    c.validate();
    return c;
}

}  // namespace

FusionModel::FusionModel(const FusionConfig& config) : config_(validated(config)) {
    Rng root(config_.seed);
    Rng r_mri(root.fork_seed()), r_pet(root.fork_seed()), r_clin(root.fork_seed()), r_att(root.fork_seed()),
        r_co(root.fork_seed()), r_cls(root.fork_seed());
    const auto& e = config_.encoder;
    mri_encoder_ = enc::ImageEncoder(e, r_mri);
    pet_encoder_ = enc::ImageEncoder(e, r_pet);
    clinical_encoder_ = enc::TabularEncoder(e, r_clin);
    for (auto& a : attention_) a = enc::SelfAttention(e, r_att);
    co_attention_ = tcaf::CoAttention(e.token_dim, config_.key_dim, r_co);
    const std::size_t in = config_.use_tcaf ? 3 * e.tokens * config_.key_dim : 3 * e.token_dim;
    classifier_ = tcaf::Classifier(in, config_.classifier_hidden, r_cls);
}

FusionOutput FusionModel::forward(const Tensor& mri, const Tensor& pet, const Tensor& clinical) const {
    if (mri.dim(0) != pet.dim(0) || mri.dim(0) != clinical.dim(0))
        throw std::invalid_argument("fusion: batch sizes differ across modalities");
    FusionOutput out;
    out.tokens[0] = attention_[0](mri_encoder_(mri));
    out.tokens[1] = attention_[1](pet_encoder_(pet));
    out.tokens[2] = attention_[2](clinical_encoder_(clinical));
    for (std::size_t i = 0; i < 3; ++i) out.pooled[i] = ops::mean(out.tokens[i], 1);
    if (config_.use_tcaf) {
        const auto co = co_attention_(out.tokens[0], out.tokens[1], out.tokens[2]);
        out.fused = tcaf::cross_concat(co.hidden[0], co.hidden[1], co.hidden[2]);
    } else {
        out.fused = ops::concat({out.pooled[0], out.pooled[1], out.pooled[2]}, 1);
    }
    out.prediction = tcaf::classify(classifier_, out.fused);
    return out;
}

nn::ParamList FusionModel::params() const {
    nn::ParamList p;
    mri_encoder_.collect("encoder.mri", p);
    pet_encoder_.collect("encoder.pet", p);
    clinical_encoder_.collect("encoder.clinical", p);
    for (std::size_t i = 0; i < 3; ++i)
        attention_[i].collect(std::string("attention.") + enc::modality_name(static_cast<enc::Modality>(i)), p);
    if (config_.use_tcaf) co_attention_.collect("tcaf", p);
    classifier_.collect("classifier", p);
    return p;
}

std::string FusionModel::metadata_json(const std::string& run_json) const {
    nlohmann::ordered_json j;
    j["kind"] = "fusion";
    j["volume_shape"] = config_.encoder.volume_shape;
    j["tokens"] = config_.encoder.tokens;
    j["token_dim"] = config_.encoder.token_dim;
    j["heads"] = config_.encoder.heads;
    j["key_dim"] = config_.key_dim;
    j["classifier_hidden"] = config_.classifier_hidden;
    j["use_tcaf"] = config_.use_tcaf;
    j["seed"] = config_.seed;
    if (!run_json.empty()) j["run"] = nlohmann::ordered_json::parse(run_json);
    return j.dump();
}

void FusionModel::save(const std::filesystem::path& path, const std::string& run_json) const {
    save_checkpoint(path, params(), metadata_json(run_json));
}

void FusionModel::load(const std::filesystem::path& path) { restore_tensors(load_checkpoint(path), params()); }

}  // namespace itcfn
