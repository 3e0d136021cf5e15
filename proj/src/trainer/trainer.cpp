#include "itcfn/trainer.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

#include "itcfn/encoders.hpp"
#include "itcfn/rng.hpp"

namespace itcfn::train {

using nlohmann::ordered_json;

Adam::Adam(nn::ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw std::invalid_argument("Adam: lr must be > 0");
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
}

void Adam::step() {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        const auto g = p.tensor.grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g[i])) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%g", g[i]);
                throw NonFiniteGradient("non-finite gradient " + std::string(buf) + " in parameter '" + p.name +
                                        "' at element " + std::to_string(i) + " (step " + std::to_string(t_ + 1) +
                                        ")");
            }
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor t = params_[k].tensor;
        const bool has = t.has_grad();
        const auto g = has ? t.grad() : std::span<const double>();
        auto x = t.mutable_data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            x[i] = store(x[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch)
        out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch));
    return out;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

void open_or_throw(std::ofstream& out, const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
    out.open(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

MmgTrainResult train_mmg(mmg::MmgModel& model, const std::vector<const SubjectRecord*>& subjects,
                         const TrainConfig& cfg, Instrumentation* inst) {
    cfg.validate();
    std::vector<const SubjectRecord*> pairs;
    for (const auto* s : subjects)
        if (s->has_pet()) pairs.push_back(s);
    if (pairs.size() < 2)
        throw std::invalid_argument("train_mmg: need at least 2 PET-complete subjects, got " +
                                    std::to_string(pairs.size()));

    const auto& mc = model.config();
    Adam gen_opt(model.generator_params(), cfg.lr);
    Adam disc_opt(model.discriminator_params(), cfg.lr);
    Rng rng(Rng::splitmix(mc.seed ^ 0x6d6d67ULL));
    auto& codebook = model.codebook();

    // Codes start as random encoder outputs so that code and latent scales
    // agree from the first step.
    {
        NoGradGuard guard;
        std::vector<const Volume*> mri;
        for (const auto* p : pairs) mri.push_back(&p->mri);
        const Tensor z = model.encode(volumes_to_tensor(mri));
        const Shape& zs = z.shape();
        const std::size_t d = zs[1], spatial = zs[2] * zs[3] * zs[4], positions = zs[0] * spatial;
        auto codes = codebook.codes().mutable_data();
        for (std::size_t k = 0; k < codebook.size(); ++k) {
            const std::size_t src = rng.below(positions);
            const std::size_t b = src / spatial, p = src % spatial;
            for (std::size_t c = 0; c < d; ++c) codes[k * d + c] = z.at((b * d + c) * spatial + p);
        }
    }

    MmgTrainResult result;
    result.n_train = pairs.size();
    for (std::size_t epoch = 1; epoch <= cfg.epochs_stage1; ++epoch) {
        codebook.reset_usage();
        MmgEpoch e;
        e.epoch = epoch;
        std::vector<double> last_latents;  // [positions x d] from the last batch
        for (const auto& batch : make_batches(pairs.size(), cfg.batch_size, rng)) {
            std::vector<const Volume*> mri, pet;
            std::vector<std::string> ids;
            for (std::size_t i : batch) {
                mri.push_back(&pairs[i]->mri);
                pet.push_back(&*pairs[i]->pet);
                ids.push_back(pairs[i]->subject_id);
            }
            if (inst) inst->mmg_batches.push_back(ids);
            const Tensor x = volumes_to_tensor(mri);
            const Tensor y = volumes_to_tensor(pet);

            gen_opt.zero_grad();
            disc_opt.zero_grad();
            const auto fwd = model.forward(x);
            const Tensor d_fake = model.discriminator()(fwd.pet);
            const auto parts = mmg::hybrid_loss(y, fwd.pet, fwd.z_hat, fwd.quantized.z_q_codes, d_fake,
                                                model.perceptual(), mc.weights, mc.commitment_beta);
            parts.total.backward();
            gen_opt.step();

            disc_opt.zero_grad();
            const Tensor d_loss =
                mmg::discriminator_loss(model.discriminator()(y), model.discriminator()(fwd.pet.detach()));
            d_loss.backward();
            disc_opt.step();

            for (std::size_t idx : fwd.quantized.indices) ++codebook.usage_counts()[idx];
            const double w = static_cast<double>(batch.size());
            e.l1 += w * parts.l1.item();
            e.quantization += w * parts.quantization.item();
            e.perceptual += w * parts.perceptual.item();
            e.adversarial += w * parts.adversarial.item();
            e.total += w * parts.total.item();

            const Shape& zs = fwd.z_hat.shape();
            const std::size_t d = zs[1], spatial = zs[2] * zs[3] * zs[4];
            const auto z = fwd.z_hat.data();
            last_latents.assign(zs[0] * spatial * d, 0.0);
            for (std::size_t b = 0; b < zs[0]; ++b)
                for (std::size_t p = 0; p < spatial; ++p)
                    for (std::size_t c = 0; c < d; ++c)
                        last_latents[(b * spatial + p) * d + c] = z[(b * d + c) * spatial + p];
        }
        const double n = static_cast<double>(pairs.size());
        e.l1 /= n;
        e.quantization /= n;
        e.perceptual /= n;
        e.adversarial /= n;
        e.total /= n;
        result.curve.push_back(e);

        // Dead codes get a random latent vector from the last batch.
        if (epoch == cfg.epochs_stage1) break;
        const std::size_t d = codebook.dim();
        const std::size_t positions = last_latents.size() / d;
        auto codes = codebook.codes().mutable_data();
        for (std::size_t k = 0; k < codebook.size(); ++k) {
            if (codebook.usage_counts()[k] != 0) continue;
            const std::size_t src = rng.below(positions);
            for (std::size_t c = 0; c < d; ++c) codes[k * d + c] = store(last_latents[src * d + c]);
            ++result.reseeded_codes;
        }
    }
    return result;
}

PetMse evaluate_pet_mse(const mmg::MmgModel& model, const std::vector<const SubjectRecord*>& train,
                        const std::vector<const SubjectRecord*>& test) {
    std::vector<double> mean;
    std::size_t n_train = 0;
    for (const auto* s : train) {
        if (!s->has_pet()) continue;
        if (mean.empty()) mean.assign(s->pet->size(), 0.0);
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += s->pet->data[i];
        ++n_train;
    }
    if (n_train == 0) throw std::invalid_argument("evaluate_pet_mse: no PET-complete training subjects");
    for (double& m : mean) m /= static_cast<double>(n_train);

    PetMse r;
    for (const auto* s : test) {
        if (!s->has_pet()) continue;
        const Volume gen = model.generate_pet(s->mri);
        double se_model = 0.0, se_mean = 0.0;
        for (std::size_t i = 0; i < mean.size(); ++i) {
            const double t = s->pet->data[i];
            se_model += (gen.data[i] - t) * (gen.data[i] - t);
            se_mean += (mean[i] - t) * (mean[i] - t);
        }
        r.model += se_model / static_cast<double>(mean.size());
        r.mean_baseline += se_mean / static_cast<double>(mean.size());
        ++r.n;
    }
    if (r.n > 0) {
        r.model /= static_cast<double>(r.n);
        r.mean_baseline /= static_cast<double>(r.n);
    }
    return r;
}

PreparedSet prepare_set(const std::vector<const SubjectRecord*>& subjects, const mmg::MmgModel* mmg,
                        Instrumentation* inst) {
    PreparedSet set;
    set.subjects = subjects;
    for (const auto* s : subjects) {
        set.labels.push_back(s->label);
        if (s->has_pet()) {
            set.pet.push_back(*s->pet);
            set.imputed.push_back(false);
            continue;
        }
        set.imputed.push_back(true);
        if (mmg) {
            set.pet.push_back(mmg->generate_pet(s->mri));
            if (inst) inst->imputed_ids.push_back(s->subject_id);
        } else {
            set.pet.emplace_back(s->mri.dims);
        }
    }
    return set;
}

namespace {

struct BatchTensors {
    Tensor mri, pet, clinical;
    std::vector<int> labels;
    std::vector<std::string> ids;
};

BatchTensors gather(const PreparedSet& set, const std::vector<std::size_t>& idx, const Standardizer& standardizer) {
    BatchTensors b;
    std::vector<const Volume*> mri, pet;
    std::vector<const SubjectRecord*> subs;
    for (std::size_t i : idx) {
        mri.push_back(&set.subjects[i]->mri);
        pet.push_back(&set.pet[i]);
        subs.push_back(set.subjects[i]);
        b.labels.push_back(set.labels[i]);
        b.ids.push_back(set.subjects[i]->subject_id);
    }
    b.mri = volumes_to_tensor(mri);
    b.pet = volumes_to_tensor(pet);
    b.clinical = enc::tabular_input(subs, standardizer);
    return b;
}

}  // namespace

FusionTrainResult train_fusion(FusionModel& model, const PreparedSet& train, const Standardizer& standardizer,
                               const loss::LossConfig& loss_cfg, const TrainConfig& cfg, Instrumentation* inst,
                               bool compute_sdm) {
    cfg.validate();
    loss_cfg.validate();
    if (train.size() == 0) throw std::invalid_argument("train_fusion: empty training set");
    FusionTrainResult result;
    result.alpha_focal = loss_cfg.alpha_from_frequency ? loss::inverse_frequency_alpha(train.labels)
                                                       : loss_cfg.alpha_focal;
    Adam opt(model.params(), cfg.lr);
    Rng rng(Rng::splitmix(model.config().seed ^ 0x667573ULL));

    for (std::size_t epoch = 1; epoch <= cfg.epochs_stage2; ++epoch) {
        FusionEpoch e;
        e.epoch = epoch;
        for (const auto& idx : make_batches(train.size(), cfg.batch_size, rng)) {
            const BatchTensors b = gather(train, idx, standardizer);
            if (inst) inst->fusion_batches.push_back(b.ids);
            opt.zero_grad();
            const FusionOutput out = model.forward(b.mri, b.pet, b.clinical);
            const Tensor focal = loss::focal_loss(out.prediction.probs, b.labels, loss_cfg.gamma, result.alpha_focal);
            Tensor total = focal;
            const double w = static_cast<double>(idx.size());
            if (compute_sdm && idx.size() >= 2) {
                const Tensor mt = loss::sdm_loss(out.pooled[0], out.pooled[2], b.labels, loss_cfg.tau, loss_cfg.eps);
                const Tensor pt = loss::sdm_loss(out.pooled[1], out.pooled[2], b.labels, loss_cfg.tau, loss_cfg.eps);
                const Tensor mp = loss::sdm_loss(out.pooled[0], out.pooled[1], b.labels, loss_cfg.tau, loss_cfg.eps);
                total = loss::total_loss(focal, loss::triple_loss(mt, pt, mp, loss_cfg.lambda), loss_cfg.alpha_total);
                e.sdm_mt += w * mt.item();
                e.sdm_pt += w * pt.item();
                e.sdm_mp += w * mp.item();
            }
            total.backward();
            opt.step();
            e.focal += w * focal.item();
            e.total += w * total.item();
        }
        const double n = static_cast<double>(train.size());
        e.total /= n;
        e.focal /= n;
        e.sdm_mt /= n;
        e.sdm_pt /= n;
        e.sdm_mp /= n;
        result.curve.push_back(e);
    }
    return result;
}

std::vector<double> predict(const FusionModel& model, const PreparedSet& set, const Standardizer& standardizer,
                            std::size_t batch_size) {
    NoGradGuard guard;
    std::vector<double> out;
    for (std::size_t i = 0; i < set.size(); i += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t j = i; j < std::min(set.size(), i + batch_size); ++j) idx.push_back(j);
        const BatchTensors b = gather(set, idx, standardizer);
        const auto fwd = model.forward(b.mri, b.pet, b.clinical);
        const auto probs = fwd.prediction.probs.data();
        for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(probs[r * 2 + 1]);
    }
    return out;
}

std::string run_info_json(const std::string& hash, std::uint64_t seed) {
    ordered_json j;
    j["config_hash"] = hash;
    j["seed"] = seed;
    return j.dump();
}

void write_mmg_curve(const std::filesystem::path& path, const MmgTrainResult& r, const std::string& hash,
                     std::uint64_t seed) {
    std::ofstream out;
    open_or_throw(out, path);
    out << "# config_hash=" << hash << " seed=" << seed << "\n";
    out << "epoch,l1,quantization,perceptual,adversarial,total\n";
    for (const auto& e : r.curve)
        out << e.epoch << ',' << fmt(e.l1) << ',' << fmt(e.quantization) << ',' << fmt(e.perceptual) << ','
            << fmt(e.adversarial) << ',' << fmt(e.total) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

void write_fusion_curve(const std::filesystem::path& path, const FusionTrainResult& r, const std::string& hash,
                        std::uint64_t seed) {
    std::ofstream out;
    open_or_throw(out, path);
    out << "# config_hash=" << hash << " seed=" << seed << "\n";
    out << "epoch,total,focal,sdm_mt,sdm_pt,sdm_mp\n";
    for (const auto& e : r.curve)
        out << e.epoch << ',' << fmt(e.total) << ',' << fmt(e.focal) << ',' << fmt(e.sdm_mt) << ','
            << fmt(e.sdm_pt) << ',' << fmt(e.sdm_mp) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

namespace {

ordered_json fold_tree(const FoldResult& f) {
    ordered_json j;
    j["fold"] = f.fold;
    j["n_train"] = f.n_train;
    j["n_test"] = f.n_test;
    j["n_imputed_test"] = f.n_imputed_test;
    const auto& c = f.confusion;
    j["tp"] = c.tp;
    j["tn"] = c.tn;
    j["fp"] = c.fp;
    j["fn"] = c.fn;
    j["acc"] = c.acc;
    j["sen"] = c.sen;
    j["spe"] = c.spe;
    j["auc"] = f.auc;
    j["f1"] = c.f1;
    j["undefined"] = c.undefined;
    if (f.pet_mse)
        j["pet_mse"] = {{"model", f.pet_mse->model}, {"mean_baseline", f.pet_mse->mean_baseline}, {"n", f.pet_mse->n}};
    else
        j["pet_mse"] = nullptr;
    j["mmg_checksum_before"] = f.mmg_checksum_before;
    j["mmg_checksum_after"] = f.mmg_checksum_after;
    const auto& e = f.final_loss;
    j["final_loss"] = {{"total", e.total}, {"focal", e.focal}, {"sdm_mt", e.sdm_mt}, {"sdm_pt", e.sdm_pt},
                       {"sdm_mp", e.sdm_mp}};
    return j;
}

}  // namespace

std::string fold_result_to_json(const FoldResult& f) { return fold_tree(f).dump(2) + "\n"; }

FoldResult fold_result_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    FoldResult f;
    f.fold = j.at("fold").get<std::size_t>();
    f.n_train = j.at("n_train").get<std::size_t>();
    f.n_test = j.at("n_test").get<std::size_t>();
    f.n_imputed_test = j.at("n_imputed_test").get<std::size_t>();
    auto& c = f.confusion;
    c.tp = j.at("tp").get<std::size_t>();
    c.tn = j.at("tn").get<std::size_t>();
    c.fp = j.at("fp").get<std::size_t>();
    c.fn = j.at("fn").get<std::size_t>();
    c.acc = j.at("acc").get<double>();
    c.sen = j.at("sen").get<double>();
    c.spe = j.at("spe").get<double>();
    c.f1 = j.at("f1").get<double>();
    c.undefined = j.at("undefined").get<std::vector<std::string>>();
    f.auc = j.at("auc").get<double>();
    if (!j.at("pet_mse").is_null()) {
        const auto& p = j["pet_mse"];
        f.pet_mse = PetMse{p.at("model").get<double>(), p.at("mean_baseline").get<double>(), p.at("n").get<std::size_t>()};
    }
    f.mmg_checksum_before = j.at("mmg_checksum_before").get<std::string>();
    f.mmg_checksum_after = j.at("mmg_checksum_after").get<std::string>();
    const auto& e = j.at("final_loss");
    f.final_loss.epoch = 0;
    f.final_loss.total = e.at("total").get<double>();
    f.final_loss.focal = e.at("focal").get<double>();
    f.final_loss.sdm_mt = e.at("sdm_mt").get<double>();
    f.final_loss.sdm_pt = e.at("sdm_pt").get<double>();
    f.final_loss.sdm_mp = e.at("sdm_mp").get<double>();
    return f;
}

std::string report_to_json(const MetricsReport& r) {
    ordered_json j;
    j["mode"] = r.mode;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["n_subjects"] = r.n_subjects;
    j["k_folds"] = r.folds.size();
    j["folds"] = ordered_json::array();
    for (const auto& f : r.folds) j["folds"].push_back(fold_tree(f));
    const char* names[] = {"acc", "sen", "spe", "auc", "f1"};
    ordered_json agg;
    for (const char* name : names) {
        std::vector<double> v;
        for (const auto& f : r.folds) v.push_back(fold_tree(f)[name].get<double>());
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        agg[name] = {{"mean", mean}, {"std", sd}};
    }
    j["aggregate"] = agg;
    return j.dump(2) + "\n";
}

std::uint64_t mmg_seed(std::uint64_t seed, std::size_t fold) {
    return Rng::splitmix(Rng::splitmix(seed) ^ (0x100 + fold));
}

std::uint64_t fusion_seed(std::uint64_t seed, std::size_t fold) {
    return Rng::splitmix(Rng::splitmix(seed) ^ (0x200 + fold));
}

std::vector<std::size_t> test_indices(const std::vector<SubjectRecord>& subjects, const RunConfig& cfg,
                                      std::size_t fold) {
    if (cfg.train.k_folds > subjects.size())
        throw std::invalid_argument("k_folds (" + std::to_string(cfg.train.k_folds) + ") exceeds the " +
                                    std::to_string(subjects.size()) + " subjects");
    if (fold >= cfg.train.k_folds)
        throw std::invalid_argument("fold " + std::to_string(fold) + " out of range for k=" +
                                    std::to_string(cfg.train.k_folds));
    std::vector<int> labels;
    for (const auto& s : subjects) labels.push_back(s.label);
    return split_kfold(labels, cfg.train.k_folds, cfg.train.seed)[fold];
}

std::vector<FoldResult> run_fold(const std::vector<SubjectRecord>& subjects, const RunConfig& cfg, std::size_t fold,
                                 const std::vector<AblationFlags>& modes, const std::filesystem::path& out_dir,
                                 Instrumentation* inst) {
    cfg.validate();
    const auto test_idx = test_indices(subjects, cfg, fold);
    const std::set<std::size_t> in_test(test_idx.begin(), test_idx.end());
    std::vector<const SubjectRecord*> train, test;
    for (std::size_t i = 0; i < subjects.size(); ++i) (in_test.count(i) ? test : train).push_back(&subjects[i]);

    Standardizer standardizer;
    standardizer.fit(train);
    if (inst)
        for (const auto* s : train) inst->standardizer_ids.push_back(s->subject_id);

    bool any_mmg = false;
    for (const auto& m : modes) any_mmg = any_mmg || m.use_mmg;

    const std::string fold_name = "fold_" + std::to_string(fold);
    std::optional<mmg::MmgModel> mmg_model;
    std::optional<PetMse> pet_mse;
    std::string mmg_sum;
    if (any_mmg) {
        RunConfig mmg_cfg = cfg;
        mmg_cfg.ablation = {true, true};
        mmg_model.emplace(cfg.mmg_config(mmg_seed(cfg.train.seed, fold)));
        const auto r = train_mmg(*mmg_model, train, cfg.train, inst);
        pet_mse = evaluate_pet_mse(*mmg_model, train, test);
        mmg_sum = hex64(parameter_checksum(mmg_model->all_params()));
        if (!out_dir.empty()) {
            // Stage 1 does not depend on the ablation flags; the hash of the
            // full MMG+TCAF config labels it.
            const std::string hash = config_hash(mmg_cfg);
            write_mmg_curve(out_dir / fold_name / "mmg_loss.csv", r, hash, cfg.train.seed);
            mmg_model->save(out_dir / fold_name / "mmg.itck", run_info_json(hash, cfg.train.seed));
        }
    }

    std::vector<FoldResult> results;
    for (const auto& mode : modes) {
        RunConfig mode_cfg = cfg;
        mode_cfg.ablation = mode;
        const mmg::MmgModel* gen = mode.use_mmg ? &*mmg_model : nullptr;
        const PreparedSet train_set = prepare_set(train, gen, inst);
        const PreparedSet test_set = prepare_set(test, gen, nullptr);

        FusionModel model(mode_cfg.fusion_config(fusion_seed(cfg.train.seed, fold)));
        const auto r = train_fusion(model, train_set, standardizer, cfg.loss, cfg.train, inst);
        const auto probs = predict(model, test_set, standardizer, cfg.train.batch_size);

        FoldResult f;
        f.fold = fold;
        f.n_train = train.size();
        f.n_test = test.size();
        for (bool b : test_set.imputed) f.n_imputed_test += b ? 1 : 0;
        f.confusion = metrics::confusion_metrics(metrics::threshold(probs), test_set.labels);
        f.auc = metrics::auc(probs, test_set.labels);
        if (mode.use_mmg) {
            f.pet_mse = pet_mse;
            f.mmg_checksum_before = mmg_sum;
            f.mmg_checksum_after = hex64(parameter_checksum(mmg_model->all_params()));
        }
        f.final_loss = r.curve.back();
        if (!out_dir.empty()) {
            const auto dir = out_dir / ablation_name(mode) / fold_name;
            const std::string hash = config_hash(mode_cfg);
            write_fusion_curve(dir / "fusion_loss.csv", r, hash, cfg.train.seed);
            model.save(dir / "fusion.itck", run_info_json(hash, cfg.train.seed));
        }
        results.push_back(std::move(f));
    }
    return results;
}

MetricsReport make_report(const RunConfig& cfg, const AblationFlags& mode, std::size_t n_subjects,
                          std::vector<FoldResult> folds) {
    RunConfig mode_cfg = cfg;
    mode_cfg.ablation = mode;
    MetricsReport r;
    r.mode = ablation_name(mode);
    r.config_hash = config_hash(mode_cfg);
    r.seed = cfg.train.seed;
    r.n_subjects = n_subjects;
    r.folds = std::move(folds);
    return r;
}

std::vector<MetricsReport> run_cv(const std::vector<SubjectRecord>& subjects, const RunConfig& cfg,
                                  const std::vector<AblationFlags>& modes, const std::filesystem::path& out_dir) {
    std::vector<std::vector<FoldResult>> per_mode(modes.size());
    for (std::size_t k = 0; k < cfg.train.k_folds; ++k) {
        auto folds = run_fold(subjects, cfg, k, modes, out_dir);
        for (std::size_t m = 0; m < modes.size(); ++m) per_mode[m].push_back(std::move(folds[m]));
    }
    std::vector<MetricsReport> reports;
    for (std::size_t m = 0; m < modes.size(); ++m)
        reports.push_back(make_report(cfg, modes[m], subjects.size(), std::move(per_mode[m])));
    return reports;
}

}  // namespace itcfn::train
