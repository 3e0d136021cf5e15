#include "itcfn/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "itcfn/rng.hpp"

namespace itcfn {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& b, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + i])) << (8 * i);
    return v;
}

std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

// Coordinates of voxel centers mapped to [-1, 1].
double coord(std::size_t i, std::size_t n) { return (2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n)) - 1.0; }

struct Blob {
    double cz, cy, cx, sigma, amplitude;
};

Volume render_blobs(const std::array<std::size_t, 3>& dims, const std::vector<Blob>& blobs) {
    Volume v(dims);
    for (std::size_t z = 0; z < dims[0]; ++z)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t x = 0; x < dims[2]; ++x) {
                const double pz = coord(z, dims[0]), py = coord(y, dims[1]), px = coord(x, dims[2]);
                double acc = 0.0;
                for (const auto& b : blobs) {
                    const double r2 = (pz - b.cz) * (pz - b.cz) + (py - b.cy) * (py - b.cy) + (px - b.cx) * (px - b.cx);
                    acc += b.amplitude * std::exp(-r2 / (2.0 * b.sigma * b.sigma));
                }
                v.at(z, y, x) = static_cast<float>(acc);
            }
    return v;
}

// Brain-like template: a soft ellipsoid with darker ventricles and a seeded
// low-frequency texture.
Volume make_template(const std::array<std::size_t, 3>& dims, Rng& rng) {
    std::vector<Blob> texture;
    for (int i = 0; i < 6; ++i) {
        texture.push_back({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(0.2, 0.4),
                           rng.uniform(-0.3, 0.3)});
    }
    Volume tex = render_blobs(dims, texture);
    Volume ventricles = render_blobs(dims, {{0.0, 0.05, -0.12, 0.12, 0.7}, {0.0, 0.05, 0.12, 0.12, 0.7}});
    Volume v(dims);
    for (std::size_t z = 0; z < dims[0]; ++z)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t x = 0; x < dims[2]; ++x) {
                const double pz = coord(z, dims[0]), py = coord(y, dims[1]), px = coord(x, dims[2]);
                const double r = std::sqrt(pz * pz / 0.64 + py * py / 0.81 + px * px / 0.70);
                const double brain = 1.0 / (1.0 + std::exp((r - 0.85) * 12.0));
                v.at(z, y, x) = static_cast<float>(brain * (1.0 + tex.at(z, y, x) - ventricles.at(z, y, x)));
            }
    return v;
}

}  // namespace

void write_volume(const Volume& v, const fs::path& path) {
    if (v.data.size() != v.dims[0] * v.dims[1] * v.dims[2]) throw VolumeLengthError("volume data does not match dims");
    std::string out = "VOL1";
    for (auto d : v.dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : v.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open volume for writing: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing volume: " + path.string());
}

Volume read_volume(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open volume: " + path.string());
    std::string b((std::istreambuf_iterator<char>(f)), {});
    if (b.size() < 4 || b.compare(0, 4, "VOL1") != 0) throw VolumeFormatError("bad volume magic in " + path.string());
    if (b.size() < 16) throw VolumeLengthError("volume header truncated in " + path.string());
    Volume v;
    for (int i = 0; i < 3; ++i) v.dims[static_cast<std::size_t>(i)] = get_u32(b, 4 + 4 * static_cast<std::size_t>(i));
    const std::size_t n = v.dims[0] * v.dims[1] * v.dims[2];
    if (b.size() != 16 + 4 * n) {
        throw VolumeLengthError("volume " + path.string() + " declares " + std::to_string(n) + " voxels but holds " +
                                std::to_string((b.size() - 16) / 4));
    }
    v.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) v.data[i] = std::bit_cast<float>(get_u32(b, 16 + 4 * i));
    return v;
}

Tensor volumes_to_tensor(const std::vector<const Volume*>& vols) {
    if (vols.empty()) throw std::invalid_argument("volumes_to_tensor: empty batch");
    const auto dims = vols.front()->dims;
    const std::size_t vox = vols.front()->size();
    std::vector<double> data;
    data.reserve(vols.size() * vox);
    for (const Volume* v : vols) {
        if (v->dims != dims) throw std::invalid_argument("volumes_to_tensor: mixed volume shapes");
        data.insert(data.end(), v->data.begin(), v->data.end());
    }
    return Tensor::from_data({vols.size(), 1, dims[0], dims[1], dims[2]}, std::move(data));
}

Volume tensor_to_volume(const Tensor& t, std::size_t n) {
    if (t.rank() != 5 || t.dim(1) != 1 || n >= t.dim(0)) {
        throw std::invalid_argument("tensor_to_volume: expected [N,1,D,H,W], got " + shape_str(t.shape()));
    }
    Volume v({t.dim(2), t.dim(3), t.dim(4)});
    const auto d = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<float>(d[n * v.size() + i]);
    return v;
}

Volume box_blur3(const Volume& v) {
    Volume out(v.dims);
    const long D = static_cast<long>(v.dims[0]), H = static_cast<long>(v.dims[1]), W = static_cast<long>(v.dims[2]);
    for (long z = 0; z < D; ++z)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                double acc = 0.0;
                int count = 0;
                for (long a = -1; a <= 1; ++a)
                    for (long b = -1; b <= 1; ++b)
                        for (long c = -1; c <= 1; ++c) {
                            const long zz = z + a, yy = y + b, xx = x + c;
                            if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                            acc += v.at(static_cast<std::size_t>(zz), static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                            ++count;
                        }
                out.at(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                    static_cast<float>(acc / count);
            }
    return out;
}

void CohortConfig::validate() const {
    if (n_subjects < 2) throw std::invalid_argument("n_subjects must be >= 2");
    for (auto d : volume_shape) {
        if (d < 8) throw std::invalid_argument("volume_shape dims must be >= 8");
    }
    if (!(missing_pet_rate >= 0.0 && missing_pet_rate <= 1.0)) {
        throw std::invalid_argument("missing_pet_rate must be in [0, 1], got " + fmt_num(missing_pet_rate));
    }
    if (!(pmci_fraction > 0.0 && pmci_fraction < 1.0)) {
        throw std::invalid_argument("pmci_fraction must be in (0, 1), got " + fmt_num(pmci_fraction));
    }
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw std::invalid_argument("noise_sigma must be >= 0");
}

std::vector<SubjectRecord> synthesize_cohort(const CohortConfig& config) {
    config.validate();
    const auto dims = config.volume_shape;
    Rng root(config.seed);
    Rng template_rng(root.fork_seed());
    Rng subject_rng(root.fork_seed());
    Rng missing_rng(root.fork_seed());

    const Volume tmpl = make_template(dims, template_rng);
    // Medial temporal atrophy in MRI, parietal hypometabolism in PET.
    const Volume pattern_a = render_blobs(dims, {{-0.1, -0.25, -0.38, 0.18, -0.6}, {-0.1, -0.25, 0.38, 0.18, -0.6}});
    const Volume pattern_b = render_blobs(dims, {{0.35, 0.4, -0.2, 0.22, -0.5}, {0.35, 0.4, 0.2, 0.22, -0.5}});

    const std::size_t n = config.n_subjects;
    std::vector<SubjectRecord> subjects(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& s = subjects[i];
        char id[32];
        std::snprintf(id, sizeof id, "S%04zu", i);
        s.subject_id = id;
        const double z = subject_rng.normal();
        s.latent_s = z;

        s.mri = Volume(dims);
        for (std::size_t k = 0; k < s.mri.size(); ++k) {
            s.mri.data[k] = static_cast<float>(tmpl.data[k] + z * pattern_a.data[k] + config.noise_sigma * subject_rng.normal());
        }
        const Volume smooth = box_blur3(s.mri);
        Volume pet(dims);
        for (std::size_t k = 0; k < pet.size(); ++k) {
            pet.data[k] = static_cast<float>(std::tanh(1.5 * smooth.data[k]) + z * pattern_b.data[k] +
                                             config.noise_sigma * subject_rng.normal());
        }
        s.pet = std::move(pet);

        auto& c = s.clinical;
        c.age = 74.0 + 1.0 * z + subject_rng.normal(0.0, 6.5);
        c.sex = subject_rng.uniform() < 0.55 ? 1.0 : 0.0;
        c.education = 15.6 - 0.3 * z + subject_rng.normal(0.0, 2.8);
        const double apoe_latent = 0.7 * z + subject_rng.normal();
        c.apoe4 = apoe_latent < 0.4 ? 0.0 : (apoe_latent < 1.5 ? 1.0 : 2.0);
        c.ptau = 25.0 + 6.0 * z + subject_rng.normal(0.0, 8.0);
        c.ttau = 280.0 + 45.0 * z + subject_rng.normal(0.0, 70.0);
        c.fdg_summary = 1.25 - 0.05 * z + subject_rng.normal(0.0, 0.08);
    }

    // Labels: the round(n * pmci_fraction) subjects with the largest s.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return subjects[a].latent_s > subjects[b].latent_s; });
    const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n) * config.pmci_fraction));
    for (std::size_t r = 0; r < n; ++r) subjects[order[r]].label = r < n_pos ? 1 : 0;

    const auto n_missing = static_cast<std::size_t>(std::llround(static_cast<double>(n) * config.missing_pet_rate));
    std::vector<std::size_t> missing_order(n);
    std::iota(missing_order.begin(), missing_order.end(), 0);
    if (config.label_correlated_missing) {
        std::stable_sort(missing_order.begin(), missing_order.end(), [&](std::size_t a, std::size_t b) {
            return std::fabs(subjects[a].latent_s) < std::fabs(subjects[b].latent_s);
        });
    } else {
        missing_rng.shuffle(missing_order);
    }
    for (std::size_t r = 0; r < n_missing; ++r) subjects[missing_order[r]].pet.reset();
    return subjects;
}

CohortSummary summarize(const std::vector<SubjectRecord>& subjects) {
    CohortSummary s;
    s.n_subjects = subjects.size();
    for (const auto& r : subjects) {
        (r.label == 1 ? s.n_pmci : s.n_smci)++;
        (r.has_pet() ? s.n_with_pet : s.n_missing_pet)++;
    }
    return s;
}

void write_manifest(const std::vector<SubjectRecord>& subjects, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir / "mri", ec);
    if (!ec) fs::create_directories(out_dir / "pet", ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

    std::ostringstream csv;
    for (std::size_t i = 0; i < kManifestColumns.size(); ++i) csv << (i ? "," : "") << kManifestColumns[i];
    csv << '\n';
    for (const auto& s : subjects) {
        const std::string mri_rel = "mri/" + s.subject_id + ".vol";
        const std::string pet_rel = s.has_pet() ? "pet/" + s.subject_id + ".vol" : "";
        write_volume(s.mri, out_dir / mri_rel);
        if (s.has_pet()) write_volume(*s.pet, out_dir / pet_rel);
        csv << s.subject_id << ',' << s.label << ',' << (s.has_pet() ? 1 : 0) << ',' << mri_rel << ',' << pet_rel;
        for (double v : s.clinical.values()) csv << ',' << fmt_num(v);
        csv << ',' << fmt_num(s.latent_s) << '\n';
    }
    std::ofstream f(out_dir / "manifest.csv", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write manifest in " + out_dir.string());
    f << csv.str();
    if (!f) throw IoError("failed writing manifest in " + out_dir.string());
}

CohortSummary generate_cohort(const CohortConfig& config, const fs::path& out_dir) {
    auto subjects = synthesize_cohort(config);
    write_manifest(subjects, out_dir);
    return summarize(subjects);
}

std::vector<SubjectRecord> load_cohort(const fs::path& dir) {
    std::ifstream f(dir / "manifest.csv");
    if (!f) throw IoError("cannot open " + (dir / "manifest.csv").string());
    std::string line;
    std::getline(f, line);
    std::string expected;
    for (std::size_t i = 0; i < kManifestColumns.size(); ++i) expected += std::string(i ? "," : "") + kManifestColumns[i];
    if (line != expected) throw std::runtime_error("manifest header mismatch: '" + line + "'");
    std::vector<SubjectRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cols.push_back(cell);
        if (!line.empty() && line.back() == ',') cols.emplace_back();
        if (cols.size() != kManifestColumns.size()) throw std::runtime_error("manifest row has wrong column count: " + line);
        SubjectRecord s;
        s.subject_id = cols[0];
        s.label = std::stoi(cols[1]);
        const bool has_pet = cols[2] == "1";
        s.mri = read_volume(dir / cols[3]);
        if (has_pet) {
            if (cols[4].empty()) throw std::runtime_error("manifest row marks has_pet but gives no pet_path: " + s.subject_id);
            s.pet = read_volume(dir / cols[4]);
            if (s.pet->dims != s.mri.dims) throw std::runtime_error("PET and MRI shapes differ for " + s.subject_id);
        }
        auto& c = s.clinical;
        c.age = std::stod(cols[5]);
        c.sex = std::stod(cols[6]);
        c.education = std::stod(cols[7]);
        c.apoe4 = std::stod(cols[8]);
        c.ptau = std::stod(cols[9]);
        c.ttau = std::stod(cols[10]);
        c.fdg_summary = std::stod(cols[11]);
        s.latent_s = std::stod(cols[12]);
        out.push_back(std::move(s));
    }
    return out;
}

void Standardizer::fit(const std::vector<const SubjectRecord*>& train) {
    if (train.empty()) throw std::invalid_argument("Standardizer::fit: empty training split");
    const double n = static_cast<double>(train.size());
    mean_.fill(0.0);
    std_.fill(0.0);
    for (const auto* s : train) {
        const auto v = s->clinical.values();
        for (std::size_t j = 0; j < v.size(); ++j) mean_[j] += v[j];
    }
    for (auto& m : mean_) m /= n;
    for (const auto* s : train) {
        const auto v = s->clinical.values();
        for (std::size_t j = 0; j < v.size(); ++j) std_[j] += (v[j] - mean_[j]) * (v[j] - mean_[j]);
    }
    // Population std; a constant column maps to 0 instead of dividing by 0.
    for (auto& sd : std_) {
        sd = std::sqrt(sd / n);
        if (sd < 1e-12) sd = 1.0;
    }
    fitted_ = true;
}

void Standardizer::set(std::array<double, ClinicalRecord::kFields> mean, std::array<double, ClinicalRecord::kFields> stddev) {
    mean_ = mean;
    std_ = stddev;
    fitted_ = true;
}

std::array<double, ClinicalRecord::kFields> Standardizer::apply(const ClinicalRecord& c) const {
    if (!fitted_) throw std::logic_error("Standardizer: apply() before fit()");
    auto v = c.values();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = (v[j] - mean_[j]) / std_[j];
    return v;
}

std::vector<std::vector<std::size_t>> split_kfold(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("split_kfold: k must be >= 2");
    if (k > labels.size()) {
        throw std::invalid_argument("split_kfold: k=" + std::to_string(k) + " exceeds " + std::to_string(labels.size()) + " subjects");
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("split_kfold: labels must be 0 or 1");
    }
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t next = 0;
    // Deal each class round-robin, continuing the fold counter across classes
    // so total fold sizes never differ by more than one.
    for (int cls : {0, 1}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == cls) members.push_back(i);
        }
        rng.shuffle(members);
        for (auto i : members) {
            folds[next].push_back(i);
            next = (next + 1) % k;
        }
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

}  // namespace itcfn
