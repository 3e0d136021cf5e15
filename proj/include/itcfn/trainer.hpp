#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "itcfn/config.hpp"
#include "itcfn/fusion.hpp"
#include "itcfn/losses.hpp"
#include "itcfn/metrics.hpp"
#include "itcfn/mmg.hpp"
#include "itcfn/nn.hpp"
#include "itcfn/synthdata.hpp"

namespace itcfn::train {

class NonFiniteGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bias-corrected Adam over a fixed parameter list. Parameters without a
// gradient are treated as having a zero gradient.
class Adam {
public:
    Adam(nn::ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Throws NonFiniteGradient naming the parameter and element before any
    // parameter is modified.
    void step();
    void zero_grad();

    std::uint64_t steps() const { return t_; }
    const nn::ParamList& params() const { return params_; }
    const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
    const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

private:
    nn::ParamList params_;
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Subject ids observed at each place where data can influence a model.
struct Instrumentation {
    std::vector<std::string> standardizer_ids;
    std::vector<std::vector<std::string>> mmg_batches;
    std::vector<std::vector<std::string>> fusion_batches;
    std::vector<std::string> imputed_ids;
};

struct MmgEpoch {
    std::size_t epoch = 0;
    double l1 = 0, quantization = 0, perceptual = 0, adversarial = 0, total = 0;
};

struct MmgTrainResult {
    std::vector<MmgEpoch> curve;
    std::size_t n_train = 0;
    std::size_t reseeded_codes = 0;
};

// Stage 1. Uses only the has_pet subjects of `subjects`; alternates a
// generator step on the hybrid loss with a discriminator step. Codes unused
// during an epoch are reseeded from encoder outputs.
MmgTrainResult train_mmg(mmg::MmgModel& model, const std::vector<const SubjectRecord*>& subjects,
                         const TrainConfig& cfg, Instrumentation* inst = nullptr);

struct PetMse {
    double model = 0.0;
    double mean_baseline = 0.0;  // voxelwise mean of the training PET volumes
    std::size_t n = 0;
};

// MSE of generated PET on the has_pet subjects of `test`.
PetMse evaluate_pet_mse(const mmg::MmgModel& model, const std::vector<const SubjectRecord*>& train,
                        const std::vector<const SubjectRecord*>& test);

// Stage-2 inputs with the PET slot resolved per subject: the real volume when
// present, otherwise the frozen MMG output, otherwise zeros.
struct PreparedSet {
    std::vector<const SubjectRecord*> subjects;
    std::vector<Volume> pet;
    std::vector<bool> imputed;
    std::vector<int> labels;

    std::size_t size() const { return subjects.size(); }
};

PreparedSet prepare_set(const std::vector<const SubjectRecord*>& subjects, const mmg::MmgModel* mmg,
                        Instrumentation* inst = nullptr);

struct FusionEpoch {
    std::size_t epoch = 0;
    double total = 0, focal = 0, sdm_mt = 0, sdm_pt = 0, sdm_mp = 0;
};

struct FusionTrainResult {
    std::vector<FusionEpoch> curve;
    std::array<double, 2> alpha_focal{1.0, 1.0};
};

// Stage 2 on focal + alpha_total * triple SDM. With compute_sdm = false the
// SDM terms are neither computed nor logged. Batches of one sample skip SDM.
FusionTrainResult train_fusion(FusionModel& model, const PreparedSet& train, const Standardizer& standardizer,
                               const loss::LossConfig& loss_cfg, const TrainConfig& cfg,
                               Instrumentation* inst = nullptr, bool compute_sdm = true);

// Positive-class probabilities, in set order.
std::vector<double> predict(const FusionModel& model, const PreparedSet& set, const Standardizer& standardizer,
                            std::size_t batch_size);

void write_mmg_curve(const std::filesystem::path& path, const MmgTrainResult& r, const std::string& hash,
                     std::uint64_t seed);
void write_fusion_curve(const std::filesystem::path& path, const FusionTrainResult& r, const std::string& hash,
                        std::uint64_t seed);

// JSON object {"config_hash": ..., "seed": ...} stored in checkpoints.
std::string run_info_json(const std::string& hash, std::uint64_t seed);

struct FoldResult {
    std::size_t fold = 0;
    std::size_t n_train = 0, n_test = 0, n_imputed_test = 0;
    metrics::Confusion confusion;
    double auc = 0.0;
    std::optional<PetMse> pet_mse;
    std::string mmg_checksum_before, mmg_checksum_after;
    FusionEpoch final_loss;
};

struct MetricsReport {
    std::string mode;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t n_subjects = 0;
    std::vector<FoldResult> folds;
};

std::string fold_result_to_json(const FoldResult& f);
FoldResult fold_result_from_json(const std::string& text);
// Per-fold entries plus mean and sample std of acc, sen, spe, auc, f1.
std::string report_to_json(const MetricsReport& r);

// Seeds derived from the train seed so that every mode of one fold shares the
// same split, MMG and encoder initialization.
std::uint64_t mmg_seed(std::uint64_t seed, std::size_t fold);
std::uint64_t fusion_seed(std::uint64_t seed, std::size_t fold);

// Runs one CV fold for each requested mode. Stage 1 runs once and is shared by
// the MMG modes. When `out_dir` is non-empty, loss curves and checkpoints are
// written under out_dir/fold_<k>/ and out_dir/<mode>/fold_<k>/.
std::vector<FoldResult> run_fold(const std::vector<SubjectRecord>& subjects, const RunConfig& cfg, std::size_t fold,
                                 const std::vector<AblationFlags>& modes, const std::filesystem::path& out_dir = {},
                                 Instrumentation* inst = nullptr);

// All folds in-process, one report per mode.
std::vector<MetricsReport> run_cv(const std::vector<SubjectRecord>& subjects, const RunConfig& cfg,
                                  const std::vector<AblationFlags>& modes, const std::filesystem::path& out_dir = {});

// Assembles a report from fold results; hash and seed come from cfg with the
// ablation flags set to `mode`.
MetricsReport make_report(const RunConfig& cfg, const AblationFlags& mode, std::size_t n_subjects,
                          std::vector<FoldResult> folds);

// Test-fold indices for `fold`, as used by run_fold.
std::vector<std::size_t> test_indices(const std::vector<SubjectRecord>& subjects, const RunConfig& cfg,
                                      std::size_t fold);

}  // namespace itcfn::train
