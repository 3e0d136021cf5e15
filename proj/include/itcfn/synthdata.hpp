#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "itcfn/tensor.hpp"

namespace itcfn {

// Rank-3 D x H x W grid of 32-bit floats, W fastest.
struct Volume {
    std::array<std::size_t, 3> dims{0, 0, 0};
    std::vector<float> data;

    Volume() = default;
    explicit Volume(std::array<std::size_t, 3> d) : dims(d), data(d[0] * d[1] * d[2], 0.0f) {}

    std::size_t size() const { return data.size(); }
    float& at(std::size_t z, std::size_t y, std::size_t x) { return data[(z * dims[1] + y) * dims[2] + x]; }
    float at(std::size_t z, std::size_t y, std::size_t x) const { return data[(z * dims[1] + y) * dims[2] + x]; }
};

// File could not be opened, created or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class VolumeFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class VolumeLengthError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// "VOL1" | u32 D | u32 H | u32 W | D*H*W f32, all little-endian.
void write_volume(const Volume& v, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);

// Stacks volumes into a [N, 1, D, H, W] tensor.
Tensor volumes_to_tensor(const std::vector<const Volume*>& vols);
// Extracts sample `n` of a [N, 1, D, H, W] tensor.
Volume tensor_to_volume(const Tensor& t, std::size_t n = 0);

struct ClinicalRecord {
    double age = 0.0;
    double sex = 0.0;        // {0, 1}
    double education = 0.0;  // years
    double apoe4 = 0.0;      // allele count {0, 1, 2}
    double ptau = 0.0;
    double ttau = 0.0;
    double fdg_summary = 0.0;

    static constexpr std::size_t kFields = 7;
    std::array<double, kFields> values() const { return {age, sex, education, apoe4, ptau, ttau, fdg_summary}; }
};

inline constexpr std::array<const char*, ClinicalRecord::kFields> kClinicalColumns = {
    "age", "sex", "education", "apoe4", "ptau", "ttau", "fdg_summary"};

struct SubjectRecord {
    std::string subject_id;
    Volume mri;
    std::optional<Volume> pet;
    ClinicalRecord clinical;
    int label = 0;  // 0 = sMCI, 1 = pMCI
    double latent_s = 0.0;

    bool has_pet() const { return pet.has_value(); }
};

struct CohortConfig {
    std::size_t n_subjects = 200;
    std::array<std::size_t, 3> volume_shape{16, 16, 16};
    double missing_pet_rate = 0.3;
    double pmci_fraction = 0.4;
    double noise_sigma = 0.1;
    std::uint64_t seed = 7;
    // Assigns missing PET to the subjects with the smallest |s| instead of a
    // seeded shuffle, which correlates missingness with the label.
    bool label_correlated_missing = false;

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct CohortSummary {
    std::size_t n_subjects = 0;
    std::size_t n_pmci = 0;
    std::size_t n_smci = 0;
    std::size_t n_with_pet = 0;
    std::size_t n_missing_pet = 0;
};

// Cohort driven by one latent disease score s ~ N(0, 1) per subject:
//   MRI = template + s * pattern_A + noise
//   PET = tanh(box3(MRI)) + s * pattern_B + noise
//   clinical columns = noisy affine functions of s
//   label = 1 for the round(n * pmci_fraction) largest s
std::vector<SubjectRecord> synthesize_cohort(const CohortConfig& config);

// Writes manifest.csv, mri/<id>.vol and pet/<id>.vol under out_dir.
CohortSummary generate_cohort(const CohortConfig& config, const std::filesystem::path& out_dir);

CohortSummary summarize(const std::vector<SubjectRecord>& subjects);

inline constexpr std::array<const char*, 13> kManifestColumns = {
    "subject_id", "label", "has_pet", "mri_path", "pet_path", "age", "sex",
    "education", "apoe4", "ptau", "ttau", "fdg_summary", "latent_s_debug"};

void write_manifest(const std::vector<SubjectRecord>& subjects, const std::filesystem::path& out_dir);
// Reads manifest.csv and every referenced volume.
std::vector<SubjectRecord> load_cohort(const std::filesystem::path& dir);

// 3x3x3 box blur with the window clipped at the borders.
Volume box_blur3(const Volume& v);

// Per-column mean/std fitted on a training split.
class Standardizer {
public:
    void fit(const std::vector<const SubjectRecord*>& train);
    void set(std::array<double, ClinicalRecord::kFields> mean, std::array<double, ClinicalRecord::kFields> stddev);
    bool fitted() const { return fitted_; }
    std::array<double, ClinicalRecord::kFields> apply(const ClinicalRecord& c) const;
    const std::array<double, ClinicalRecord::kFields>& mean() const { return mean_; }
    const std::array<double, ClinicalRecord::kFields>& stddev() const { return std_; }

private:
    bool fitted_ = false;
    std::array<double, ClinicalRecord::kFields> mean_{};
    std::array<double, ClinicalRecord::kFields> std_{};
};

// k disjoint test folds, stratified by label, fold sizes within one of each
// other, deterministic in seed. Returned folds hold indices into `labels`.
std::vector<std::vector<std::size_t>> split_kfold(const std::vector<int>& labels, std::size_t k, std::uint64_t seed);

}  // namespace itcfn
