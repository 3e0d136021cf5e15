#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "itcfn/config.hpp"
#include "itcfn/trainer.hpp"

using namespace itcfn;
using namespace itcfn::train;

namespace {

std::string bytes_of(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("itcfn_trainer_" + std::to_string(::getpid())) / name;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

RunConfig tiny_config() {
    RunConfig c;
    c.cohort.n_subjects = 16;
    c.cohort.volume_shape = {8, 8, 8};
    c.cohort.missing_pet_rate = 0.25;
    c.train.epochs_stage1 = 2;
    c.train.epochs_stage2 = 2;
    c.train.k_folds = 2;
    c.codebook_size = 8;
    c.code_dim = 4;
    c.tokens = 4;
    c.token_dim = 4;
    c.heads = 2;
    c.key_dim = 4;
    c.classifier_hidden = 8;
    return c;
}

std::vector<const SubjectRecord*> pointers(const std::vector<SubjectRecord>& s) {
    std::vector<const SubjectRecord*> out;
    for (const auto& r : s) out.push_back(&r);
    return out;
}

std::size_t count_data_rows(const std::filesystem::path& csv) {
    std::ifstream in(csv);
    std::string line;
    std::size_t rows = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        ++rows;
    }
    return rows;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    Tensor p = Tensor::from_data({3}, {0.5, -1.0, 2.0}, true);
    Adam opt({{"p", p}}, 1e-3);
    p.mutable_grad();
    for (int i = 0; i < 5; ++i) opt.step();
    EXPECT_EQ(p.at(0), 0.5);
    EXPECT_EQ(p.at(1), -1.0);
    EXPECT_EQ(p.at(2), 2.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    Adam opt({{"p", p}}, 0.1);
    p.mutable_grad()[0] = 1.0;
    opt.step();
    EXPECT_NEAR(1.0 - p.at(0), 0.1, 1e-6);
}

TEST(Adam, HandComputedSecondStep) {
    PrecisionScope wide(Precision::Float64);
    Tensor p = Tensor::from_data({1}, {0.0}, true);
    Adam opt({{"p", p}}, 0.01);
    p.mutable_grad()[0] = 2.0;
    opt.step();
    p.mutable_grad()[0] = -1.0;
    opt.step();
    const double m = 0.9 * 0.1 * 2.0 + 0.1 * -1.0;
    const double v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0;
    const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
    const double expect = -0.01 * 1.0 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    EXPECT_NEAR(p.at(0), expect, 1e-9);
}

TEST(Adam, TenStepsAreBitwiseRepeatable) {
    auto run = [] {
        Rng rng(3);
        Tensor p = normal_tensor({4, 3}, 1.0, rng).set_requires_grad(true);
        Adam opt({{"p", p}}, 0.05);
        for (int s = 0; s < 10; ++s) {
            opt.zero_grad();
            ops::sum(ops::square(ops::sub(p, Tensor::full({4, 3}, 0.3)))).backward();
            opt.step();
        }
        return std::vector<double>(p.data().begin(), p.data().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(Adam, NanGradientNamesParameter) {
    Tensor a = Tensor::from_data({2}, {1.0, 1.0}, true);
    Tensor b = Tensor::from_data({2}, {1.0, 1.0}, true);
    Adam opt({{"encoder.weight", a}, {"classifier.bias", b}}, 0.1);
    a.mutable_grad();
    b.mutable_grad()[1] = std::nan("");
    try {
        opt.step();
        FAIL() << "expected NonFiniteGradient";
    } catch (const NonFiniteGradient& e) {
        EXPECT_NE(std::string(e.what()).find("classifier.bias"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("element 1"), std::string::npos) << e.what();
    }
    EXPECT_EQ(a.at(0), 1.0);  // nothing applied
}

TEST(RunConfigJson, DefaultsRoundtrip) {
    const RunConfig c;
    const RunConfig r = run_config_from_json(run_config_to_json(c));
    EXPECT_EQ(config_hash(c), config_hash(r));
    EXPECT_EQ(run_config_to_json(c), run_config_to_json(r));
}

TEST(RunConfigJson, PartialConfigKeepsDefaults) {
    const RunConfig r = run_config_from_json(R"({"train": {"epochs_stage1": 4}, "ablation": {"use_mmg": false}})");
    EXPECT_EQ(r.train.epochs_stage1, 4u);
    EXPECT_EQ(r.train.epochs_stage2, 30u);
    EXPECT_FALSE(r.ablation.use_mmg);
    EXPECT_TRUE(r.ablation.use_tcaf);
}

TEST(RunConfigJson, UnknownKeysRejectedWithPath) {
    try {
        run_config_from_json(R"({"train": {"epochs": 4}})");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos) << e.what();
    }
    EXPECT_THROW(run_config_from_json(R"({"mmg": {"weights": {"l2": 1}}})"), ConfigError);
    EXPECT_THROW(run_config_from_json(R"({"extra": 1})"), ConfigError);
}

TEST(RunConfigJson, RangeAndTypeErrors) {
    try {
        run_config_from_json(R"({"cohort": {"missing_pet_rate": 1.5}})");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("missing_pet_rate"), std::string::npos) << e.what();
    }
    EXPECT_THROW(run_config_from_json(R"({"train": {"lr": 0}})"), ConfigError);
    EXPECT_THROW(run_config_from_json(R"({"train": {"batch_size": -1}})"), ConfigError);
    EXPECT_THROW(run_config_from_json(R"({"train": {"lr": "fast"}})"), ConfigError);
    EXPECT_THROW(run_config_from_json(R"({"fusion": {"heads": 3}})"), ConfigError);
    EXPECT_THROW(run_config_from_json(R"({"loss": {"alpha_focal": [1]}})"), ConfigError);
    EXPECT_THROW(run_config_from_json("{not json"), ConfigError);
    const RunConfig a = run_config_from_json(R"({"loss": {"alpha_focal": [0.25, 0.75]}})");
    EXPECT_FALSE(a.loss.alpha_from_frequency);
    EXPECT_EQ(a.loss.alpha_focal[1], 0.75);
}

TEST(RunConfigJson, HashIgnoresOutputDirButNotSettings) {
    RunConfig a, b;
    b.output_dir = "elsewhere";
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.train.seed = 2;
    EXPECT_NE(config_hash(a), config_hash(b));
    RunConfig c;
    c.ablation.use_tcaf = false;
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(RunConfigJson, AblationNames) {
    for (const char* n : {"none", "mmg_only", "tcaf_only", "mmg_tcaf"}) EXPECT_EQ(ablation_name(ablation_from_name(n)), n);
    EXPECT_THROW(ablation_from_name("both"), ConfigError);
}

class TinyCohort : public ::testing::Test {
protected:
    RunConfig cfg = tiny_config();
    std::vector<SubjectRecord> subjects = synthesize_cohort(cfg.cohort);
};

TEST_F(TinyCohort, TrainMmgUsesOnlyPetSubjectsAndWritesCurve) {
    mmg::MmgModel model(cfg.mmg_config(5));
    Instrumentation inst;
    const auto r = train_mmg(model, pointers(subjects), cfg.train, &inst);
    ASSERT_EQ(r.curve.size(), cfg.train.epochs_stage1);
    std::set<std::string> with_pet;
    for (const auto& s : subjects)
        if (s.has_pet()) with_pet.insert(s.subject_id);
    std::size_t seen = 0;
    for (const auto& batch : inst.mmg_batches) {
        EXPECT_LE(batch.size(), cfg.train.batch_size);
        for (const auto& id : batch) {
            EXPECT_TRUE(with_pet.count(id)) << id;
            ++seen;
        }
    }
    EXPECT_EQ(seen, with_pet.size() * cfg.train.epochs_stage1);  // last partial batch kept
    for (const auto& e : r.curve) {
        EXPECT_TRUE(std::isfinite(e.total));
        EXPECT_NEAR(e.total, e.l1 + e.quantization + 0.1 * e.perceptual + 0.01 * e.adversarial, 1e-5);
    }
    const auto dir = scratch("mmg_curve");
    write_mmg_curve(dir / "c.csv", r, "abc", 9);
    EXPECT_EQ(count_data_rows(dir / "c.csv"), cfg.train.epochs_stage1);
    std::ifstream in(dir / "c.csv");
    std::string first, header;
    std::getline(in, first);
    std::getline(in, header);
    EXPECT_EQ(first, "# config_hash=abc seed=9");
    EXPECT_EQ(header, "epoch,l1,quantization,perceptual,adversarial,total");
}

TEST_F(TinyCohort, TrainMmgRequiresPetSubjects) {
    std::vector<SubjectRecord> no_pet = subjects;
    for (auto& s : no_pet) s.pet.reset();
    mmg::MmgModel model(cfg.mmg_config(5));
    EXPECT_THROW(train_mmg(model, pointers(no_pet), cfg.train), std::invalid_argument);
}

TEST_F(TinyCohort, TrainMmgCheckpointIsBitwiseRepeatable) {
    const auto dir = scratch("mmg_repeat");
    for (const char* name : {"a.itck", "b.itck"}) {
        mmg::MmgModel model(cfg.mmg_config(5));
        train_mmg(model, pointers(subjects), cfg.train);
        model.save(dir / name, run_info_json("h", 1));
    }
    EXPECT_EQ(bytes_of(dir / "a.itck"), bytes_of(dir / "b.itck"));
}

TEST_F(TinyCohort, PrepareSetImputesOnlyMissingPet) {
    mmg::MmgModel model(cfg.mmg_config(5));
    Instrumentation inst;
    const auto set = prepare_set(pointers(subjects), &model, &inst);
    std::size_t missing = 0;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        EXPECT_EQ(set.imputed[i], !subjects[i].has_pet());
        if (subjects[i].has_pet()) {
            EXPECT_EQ(set.pet[i].data, subjects[i].pet->data);
        } else {
            ++missing;
            EXPECT_EQ(set.pet[i].data, model.generate_pet(subjects[i].mri).data);
        }
    }
    EXPECT_EQ(inst.imputed_ids.size(), missing);
    const auto zero = prepare_set(pointers(subjects), nullptr);
    for (std::size_t i = 0; i < subjects.size(); ++i)
        if (!subjects[i].has_pet())
            for (float v : zero.pet[i].data) EXPECT_EQ(v, 0.0f);
}

TEST_F(TinyCohort, StageTwoLeavesMmgUntouched) {
    mmg::MmgModel model(cfg.mmg_config(5));
    train_mmg(model, pointers(subjects), cfg.train);
    const auto before = parameter_checksum(model.all_params());
    Standardizer st;
    st.fit(pointers(subjects));
    const auto set = prepare_set(pointers(subjects), &model);
    FusionModel fusion(cfg.fusion_config(2));
    train_fusion(fusion, set, st, cfg.loss, cfg.train);
    EXPECT_EQ(parameter_checksum(model.all_params()), before);
}

TEST_F(TinyCohort, AlphaZeroMatchesSkippingSdm) {
    Standardizer st;
    st.fit(pointers(subjects));
    const auto set = prepare_set(pointers(subjects), nullptr);
    loss::LossConfig lc = cfg.loss;
    lc.alpha_total = 0.0;
    FusionModel a(cfg.fusion_config(2)), b(cfg.fusion_config(2));
    const auto ra = train_fusion(a, set, st, lc, cfg.train, nullptr, true);
    const auto rb = train_fusion(b, set, st, lc, cfg.train, nullptr, false);
    EXPECT_EQ(parameter_checksum(a.params()), parameter_checksum(b.params()));
    EXPECT_GT(ra.curve.back().sdm_mt, 0.0);  // computed and logged
    EXPECT_EQ(rb.curve.back().sdm_mt, 0.0);
    const auto dir = scratch("alpha0");
    a.save(dir / "a.itck");
    b.save(dir / "b.itck");
    EXPECT_EQ(bytes_of(dir / "a.itck"), bytes_of(dir / "b.itck"));

    // With alpha > 0 the SDM terms do move the parameters.
    lc.alpha_total = 0.5;
    FusionModel c(cfg.fusion_config(2));
    train_fusion(c, set, st, lc, cfg.train);
    EXPECT_NE(parameter_checksum(a.params()), parameter_checksum(c.params()));
}

TEST_F(TinyCohort, FusionCurveColumns) {
    Standardizer st;
    st.fit(pointers(subjects));
    FusionModel m(cfg.fusion_config(2));
    const auto r = train_fusion(m, prepare_set(pointers(subjects), nullptr), st, cfg.loss, cfg.train);
    const auto dir = scratch("fusion_curve");
    write_fusion_curve(dir / "f.csv", r, "h", 3);
    EXPECT_EQ(count_data_rows(dir / "f.csv"), cfg.train.epochs_stage2);
    std::ifstream in(dir / "f.csv");
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,total,focal,sdm_mt,sdm_pt,sdm_mp");
    for (const auto& e : r.curve)
        EXPECT_NEAR(e.total, e.focal + cfg.loss.alpha_total * (0.25 * (e.sdm_mt + e.sdm_pt) + 0.5 * e.sdm_mp), 1e-5);
}

TEST_F(TinyCohort, SingleSampleBatchesSkipSdm) {
    Standardizer st;
    st.fit(pointers(subjects));
    TrainConfig tc = cfg.train;
    tc.batch_size = 1;
    tc.epochs_stage2 = 1;
    FusionModel m(cfg.fusion_config(2));
    const auto r = train_fusion(m, prepare_set(pointers(subjects), nullptr), st, cfg.loss, tc);
    EXPECT_EQ(r.curve[0].sdm_mt, 0.0);
    EXPECT_EQ(r.curve[0].total, r.curve[0].focal);
}

TEST_F(TinyCohort, NoTestSubjectReachesAnyTrainingPath) {
    for (std::size_t fold = 0; fold < cfg.train.k_folds; ++fold) {
        Instrumentation inst;
        const auto results = run_fold(subjects, cfg, fold, {{true, true}, {false, false}}, {}, &inst);
        ASSERT_EQ(results.size(), 2u);
        std::set<std::string> test_ids;
        for (std::size_t i : test_indices(subjects, cfg, fold)) test_ids.insert(subjects[i].subject_id);
        ASSERT_FALSE(test_ids.empty());
        ASSERT_FALSE(inst.mmg_batches.empty());
        ASSERT_FALSE(inst.fusion_batches.empty());
        for (const auto& id : inst.standardizer_ids) EXPECT_FALSE(test_ids.count(id)) << id;
        for (const auto& b : inst.mmg_batches)
            for (const auto& id : b) EXPECT_FALSE(test_ids.count(id)) << id;
        for (const auto& b : inst.fusion_batches)
            for (const auto& id : b) EXPECT_FALSE(test_ids.count(id)) << id;
        EXPECT_EQ(inst.standardizer_ids.size() + test_ids.size(), subjects.size());
        EXPECT_EQ(results[0].mmg_checksum_before, results[0].mmg_checksum_after);
        EXPECT_TRUE(results[0].pet_mse.has_value());
        EXPECT_FALSE(results[1].pet_mse.has_value());
    }
}

TEST_F(TinyCohort, ReportAggregatesAreFoldMeans) {
    const auto reports = run_cv(subjects, cfg, {{false, true}});
    ASSERT_EQ(reports.size(), 1u);
    const auto j = nlohmann::json::parse(report_to_json(reports[0]));
    ASSERT_EQ(j["folds"].size(), cfg.train.k_folds);
    std::size_t tested = 0;
    for (const char* m : {"acc", "sen", "spe", "auc", "f1"}) {
        double s = 0.0;
        for (const auto& f : j["folds"]) s += f[m].get<double>();
        EXPECT_NEAR(j["aggregate"][m]["mean"].get<double>(), s / static_cast<double>(cfg.train.k_folds), 1e-9) << m;
    }
    for (const auto& f : j["folds"]) {
        tested += f["n_test"].get<std::size_t>();
        const double n = f["tp"].get<double>() + f["tn"].get<double>() + f["fp"].get<double>() + f["fn"].get<double>();
        EXPECT_EQ(f["acc"].get<double>(), (f["tp"].get<double>() + f["tn"].get<double>()) / n);
    }
    EXPECT_EQ(tested, subjects.size());
    EXPECT_EQ(j["mode"], "tcaf_only");
    RunConfig mode_cfg = cfg;
    mode_cfg.ablation = {false, true};
    EXPECT_EQ(j["config_hash"], config_hash(mode_cfg));
    EXPECT_EQ(j["seed"], cfg.train.seed);
    EXPECT_EQ(report_to_json(reports[0]), report_to_json(run_cv(subjects, cfg, {{false, true}})[0]));
}

TEST(FoldResultJson, Roundtrip) {
    FoldResult f;
    f.fold = 2;
    f.n_train = 160;
    f.n_test = 40;
    f.confusion = metrics::confusion_metrics({1, 0, 1}, {1, 0, 0});
    f.auc = 0.1 + 0.2;
    f.pet_mse = PetMse{0.123456789012345, 0.5, 7};
    f.mmg_checksum_before = f.mmg_checksum_after = "00ff";
    f.final_loss.total = 1.0 / 3.0;
    EXPECT_EQ(fold_result_to_json(fold_result_from_json(fold_result_to_json(f))), fold_result_to_json(f));
}

TEST(KFold, TwoHundredSubjectsGiveFoldsOfForty) {
    RunConfig c;
    std::vector<SubjectRecord> subjects(200);
    for (std::size_t i = 0; i < 200; ++i) subjects[i].label = i < 80 ? 1 : 0;
    std::set<std::size_t> all;
    for (std::size_t k = 0; k < 5; ++k) {
        const auto idx = test_indices(subjects, c, k);
        EXPECT_EQ(idx.size(), 40u);
        all.insert(idx.begin(), idx.end());
    }
    EXPECT_EQ(all.size(), 200u);
    RunConfig big;
    big.train.k_folds = 300;
    EXPECT_THROW(test_indices(subjects, big, 0), std::invalid_argument);
}
