#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "etp/data.hpp"
#include "etp/errors.hpp"
#include "etp/evalkit.hpp"
#include "etp/nets.hpp"
#include "etp/rng.hpp"

using namespace etp;

namespace {

// O(N^2) reference: a win counts 2, a tie counts 1, divided by 2*P*N with
// exactly the same integer arithmetic as the production path.
double auc_brute_force(const std::vector<double>& scores, const std::vector<bool>& pos) {
    std::int64_t p = 0, n = 0, twice_wins = 0;
    for (bool b : pos) (b ? p : n) += 1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!pos[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (pos[j]) continue;
            if (scores[i] > scores[j])
                twice_wins += 2;
            else if (scores[i] == scores[j])
                twice_wins += 1;
        }
    }
    return static_cast<double>(twice_wins) / static_cast<double>(2 * p * n);
}

double f1_macro_brute_force(const std::vector<int>& pred, const std::vector<int>& truth,
                            int num_classes) {
    double acc = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == c && truth[i] == c) ++tp;
            if (pred[i] == c && truth[i] != c) ++fp;
            if (pred[i] != c && truth[i] == c) ++fn;
        }
        const std::int64_t denom = 2 * tp + fp + fn;
        acc += denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
    }
    return acc / num_classes;
}

EtpModel make_model(const std::vector<EcgRecord>& records, std::uint64_t seed) {
    std::vector<std::string> reports;
    for (const auto& r : records) reports.push_back(r.report);
    Vocabulary vocab = Vocabulary::build(reports);
    ModelConfig cfg;
    cfg.init_seed = seed;
    return EtpModel(cfg, vocab);
}

}  // namespace

// ---------------------------------------------------------------------------
// AUC
// ---------------------------------------------------------------------------

TEST(Auc, MatchesBruteForceOnRandomInstancesExactly) {
    Rng rng(404);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(40));
        std::vector<double> scores(n);
        std::vector<bool> pos(n);
        // Coarse score grid forces plenty of ties.
        for (auto& s : scores) s = static_cast<double>(rng.below(6)) / 4.0;
        int p = 0;
        for (std::size_t i = 0; i < pos.size(); ++i) {
            pos[i] = rng.uniform() < 0.4;
            p += pos[i] ? 1 : 0;
        }
        if (p == 0) pos[0] = true;
        if (p == n) pos[0] = false;
        EXPECT_EQ(auc_ovr(scores, pos), auc_brute_force(scores, pos)) << "trial " << trial;
    }
}

TEST(Auc, KnownValues) {
    // Perfect ranking, reversed ranking, and all-ties.
    EXPECT_EQ(auc_ovr(std::vector<double>{0.9, 0.8, 0.2, 0.1}, {true, true, false, false}),
              1.0);
    EXPECT_EQ(auc_ovr(std::vector<double>{0.1, 0.2, 0.8, 0.9}, {true, true, false, false}),
              0.0);
    EXPECT_EQ(auc_ovr(std::vector<double>{0.5, 0.5, 0.5, 0.5}, {true, false, true, false}),
              0.5);
}

TEST(Auc, UndefinedWithoutBothClasses) {
    EXPECT_THROW(auc_ovr(std::vector<double>{1, 2}, {true, true}), UndefinedMetricError);
    EXPECT_THROW(auc_ovr(std::vector<double>{1, 2}, {false, false}), UndefinedMetricError);
    EXPECT_THROW(auc_ovr(std::vector<double>{1, 2}, {true, false, true}), DimensionError);
}

// ---------------------------------------------------------------------------
// F1
// ---------------------------------------------------------------------------

TEST(F1, MatchesBruteForceOnRandomInstancesExactly) {
    Rng rng(505);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(30));
        const int c = 2 + static_cast<int>(rng.below(5));
        std::vector<int> pred(n), truth(n);
        for (int i = 0; i < n; ++i) {
            pred[i] = static_cast<int>(rng.below(c));
            truth[i] = static_cast<int>(rng.below(c));
        }
        EXPECT_EQ(f1_macro(pred, truth, c), f1_macro_brute_force(pred, truth, c))
            << "trial " << trial;
    }
}

TEST(F1, PinnedSmallCase) {
    // class 0: tp=1 fp=2 fn=0 -> 1/2; class 1: tp=0 fp=0 fn=2 -> 0.
    const std::vector<int> pred = {0, 0, 0};
    const std::vector<int> truth = {0, 1, 1};
    EXPECT_EQ(f1_macro(pred, truth, 2), 0.25);

    F1PerClass per = f1_per_class(pred, truth, 2);
    EXPECT_EQ(per.f1[0], 0.5);
    EXPECT_EQ(per.f1[1], 0.0);
    EXPECT_FALSE(per.vacuous[0]);
    EXPECT_FALSE(per.vacuous[1]);

    // A class absent from both pred and truth is vacuous, scored 0.
    F1PerClass vac = f1_per_class({0, 0}, {0, 0}, 3);
    EXPECT_TRUE(vac.vacuous[2]);
    EXPECT_EQ(vac.f1[2], 0.0);
}

TEST(F1, MacroIsRelabelInvariant) {
    Rng rng(606);
    std::vector<int> pred(40), truth(40);
    for (int i = 0; i < 40; ++i) {
        pred[i] = static_cast<int>(rng.below(4));
        truth[i] = static_cast<int>(rng.below(4));
    }
    const double base = f1_macro(pred, truth, 4);
    const std::vector<int> relabel = {2, 0, 3, 1};
    std::vector<int> pred2(40), truth2(40);
    for (int i = 0; i < 40; ++i) {
        pred2[i] = relabel[pred[i]];
        truth2[i] = relabel[truth[i]];
    }
    EXPECT_EQ(f1_macro(pred2, truth2, 4), base);
}

// ---------------------------------------------------------------------------
// Scores and argmax
// ---------------------------------------------------------------------------

TEST(CosineScores, KnownGeometry) {
    Tensor a = Tensor::from_data({2, 2}, {1, 0, 3, 0});
    Tensor b = Tensor::from_data({3, 2}, {2, 0, 0, 5, -1, 0});
    auto s = cosine_scores(a, b);
    ASSERT_EQ(s.size(), 2u);
    ASSERT_EQ(s[0].size(), 3u);
    EXPECT_NEAR(s[0][0], 1.0, 1e-12);
    EXPECT_NEAR(s[0][1], 0.0, 1e-12);
    EXPECT_NEAR(s[0][2], -1.0, 1e-12);
    EXPECT_NEAR(s[1][0], 1.0, 1e-12);  // scale of either side cancels

    EXPECT_THROW(cosine_scores(Tensor::zeros({1, 2}), b), NumericDomainError);
}

TEST(ArgmaxRows, TiesGoToLowestIndex) {
    auto picks = argmax_rows({{0.2, 0.8, 0.8}, {5, 5, 5}, {1, 0, 2}});
    std::vector<int> expect = {1, 0, 2};
    EXPECT_EQ(picks, expect);
    EXPECT_THROW(argmax_rows({{}}), ContractError);
}

// ---------------------------------------------------------------------------
// Zero-shot classification
// ---------------------------------------------------------------------------

TEST(ZeroShot, StructureAndDeterminism) {
    auto records = generate_synthetic(24, LabelTaxonomy::ptbxl5(), 256, 21);
    EtpModel model = make_model(records, 3);
    PromptSet prompts = PromptSet::render(PromptSet::kDefaultTemplate, LabelTaxonomy::ptbxl5());

    ZeroShotResult a = zero_shot_classify(model, prompts, records);
    ASSERT_EQ(a.per_class.size(), 5u);
    ASSERT_EQ(a.predicted.size(), 24u);
    ASSERT_EQ(a.scores.size(), 24u);
    EXPECT_EQ(a.record_ids[0], records[0].id);

    int support = 0;
    for (const auto& pc : a.per_class) support += pc.support;
    EXPECT_EQ(support, 24);
    ASSERT_TRUE(a.avg_acc.has_value());
    EXPECT_GE(*a.avg_acc, 0.0);
    EXPECT_LE(*a.avg_acc, 1.0);

    // Evaluation touches no RNG state: a second pass is bitwise identical.
    ZeroShotResult b = zero_shot_classify(model, prompts, records);
    for (std::size_t i = 0; i < a.scores.size(); ++i)
        for (std::size_t j = 0; j < a.scores[i].size(); ++j)
            EXPECT_EQ(a.scores[i][j], b.scores[i][j]);
}

TEST(ZeroShot, PerClassAccIsRecallAndAbsentClassesAreUndefined) {
    auto all = generate_synthetic(30, LabelTaxonomy::ptbxl5(), 256, 22);
    std::vector<EcgRecord> subset;
    for (const auto& r : all)
        if (*r.label != 4) subset.push_back(r);  // drop every "hypertrophy" record
    EtpModel model = make_model(subset, 4);
    PromptSet prompts = PromptSet::render(PromptSet::kDefaultTemplate, LabelTaxonomy::ptbxl5());
    ZeroShotResult res = zero_shot_classify(model, prompts, subset);

    EXPECT_EQ(res.per_class[4].support, 0);
    EXPECT_FALSE(res.per_class[4].acc.has_value());
    EXPECT_FALSE(res.per_class[4].auc.has_value());
    EXPECT_FALSE(res.per_class[4].f1.has_value());

    for (int c = 0; c < 4; ++c) {
        if (res.per_class[c].support == 0) continue;
        int hits = 0, total = 0;
        for (std::size_t i = 0; i < subset.size(); ++i) {
            if (*subset[i].label != c) continue;
            ++total;
            hits += res.predicted[i] == c ? 1 : 0;
        }
        ASSERT_TRUE(res.per_class[c].acc.has_value());
        EXPECT_EQ(*res.per_class[c].acc, static_cast<double>(hits) / total);
    }

    // The average only spans classes that appear in the truth.
    double sum = 0.0;
    int defined = 0;
    for (const auto& pc : res.per_class)
        if (pc.acc) {
            sum += *pc.acc;
            ++defined;
        }
    ASSERT_TRUE(res.avg_acc.has_value());
    EXPECT_EQ(*res.avg_acc, sum / defined);
}

TEST(ZeroShot, RequiresLabels) {
    auto records = generate_synthetic(6, LabelTaxonomy::ptbxl5(), 256, 23);
    records[2].label = std::nullopt;
    EtpModel model = make_model(records, 5);
    PromptSet prompts = PromptSet::render(PromptSet::kDefaultTemplate, LabelTaxonomy::ptbxl5());
    EXPECT_THROW(zero_shot_classify(model, prompts, records), ContractError);
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

TEST(LinearProbe, TrainsDeterministicallyAndLeavesEncoderFrozen) {
    auto records = generate_synthetic(48, LabelTaxonomy::ptbxl5(), 256, 24);
    EtpModel model = make_model(records, 6);

    std::vector<double> before;
    for (const auto& [name, t] : model.params().items())
        before.insert(before.end(), t.values().begin(), t.values().end());

    LinearProbeResult a = linear_probe(model, records, records, 5, 8, 1e-2, 16, 31);
    LinearProbeResult b = linear_probe(model, records, records, 5, 8, 1e-2, 16, 31);

    EXPECT_EQ(a.weight.dim(0), model.config().ecg.feature_dim());
    EXPECT_EQ(a.weight.dim(1), 5);
    EXPECT_EQ(a.bias.dim(0), 5);
    EXPECT_TRUE(std::isfinite(a.auc));
    EXPECT_TRUE(std::isfinite(a.f1));
    for (std::size_t i = 0; i < a.weight.values().size(); ++i)
        EXPECT_EQ(a.weight.values()[i], b.weight.values()[i]);
    EXPECT_EQ(a.auc, b.auc);

    std::vector<double> after;
    for (const auto& [name, t] : model.params().items())
        after.insert(after.end(), t.values().begin(), t.values().end());
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(LinearProbe, TrainingBeatsAnUntrainedHead) {
    auto records = generate_synthetic(60, LabelTaxonomy::ptbxl5(), 256, 25);
    EtpModel model = make_model(records, 7);
    LinearProbeResult zero = linear_probe(model, records, records, 5, 0, 1e-2, 16, 32);
    LinearProbeResult fit = linear_probe(model, records, records, 5, 40, 1e-2, 16, 32);
    EXPECT_GT(fit.auc, zero.auc);
    EXPECT_GT(fit.auc, 0.7);  // memorizing its own training set
}

TEST(LinearProbe, UndefinedAucWhenTestHasOneClass) {
    auto records = generate_synthetic(30, LabelTaxonomy::ptbxl5(), 256, 26);
    std::vector<EcgRecord> one_class;
    for (const auto& r : records)
        if (*r.label == 1) one_class.push_back(r);
    ASSERT_GE(one_class.size(), 2u);
    EtpModel model = make_model(records, 8);
    EXPECT_THROW(linear_probe(model, records, one_class, 5, 2, 1e-2, 8, 33),
                 UndefinedMetricError);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

TEST(Reports, JsonAndTextCarryTheHeadlineNumbers) {
    auto records = generate_synthetic(20, LabelTaxonomy::ptbxl5(), 256, 27);
    EtpModel model = make_model(records, 9);
    PromptSet prompts = PromptSet::render(PromptSet::kDefaultTemplate, LabelTaxonomy::ptbxl5());
    ZeroShotResult res = zero_shot_classify(model, prompts, records);

    const std::string json = zero_shot_report_json(res, "{}", "ckpt-test");
    EXPECT_NE(json.find("\"average\""), std::string::npos);
    EXPECT_NE(json.find("\"per_class\""), std::string::npos);
    EXPECT_NE(json.find("ckpt-test"), std::string::npos);
    EXPECT_NE(json.find("myocardial infarction"), std::string::npos);

    const std::string text = zero_shot_report_text(res);
    EXPECT_NE(text.find("Average"), std::string::npos);
    EXPECT_NE(text.find("normal ECG"), std::string::npos);

    LinearProbeResult probe = linear_probe(model, records, records, 5, 2, 1e-2, 8, 34);
    const std::string pj = probe_report_json(probe, "{}", "ckpt-test");
    EXPECT_NE(pj.find("\"auc\""), std::string::npos);
    const std::string pt = probe_report_text(probe);
    EXPECT_NE(pt.find("macro AUC"), std::string::npos);
}
