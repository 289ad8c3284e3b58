#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "etp/data.hpp"
#include "etp/nets.hpp"
#include "etp/tensor.hpp"

namespace etp {

/// Metrics for one class. A class with no true instances in the evaluated
/// set has no defined AUC/ACC/F1; such classes carry nullopt and are
/// excluded from the averages. Per-class ACC is that class's recall: the
/// fraction of its true records the argmax assigned to it.
struct PerClassMetrics {
    std::string code;
    std::string display_name;
    int support = 0;
    std::optional<double> auc, acc, f1;
};

struct ZeroShotResult {
    std::vector<PerClassMetrics> per_class;
    std::optional<double> avg_auc, avg_acc, avg_f1;  ///< unweighted over defined classes
    std::vector<std::string> record_ids;
    std::vector<int> predicted;
    std::vector<std::vector<double>> scores;  ///< [N][num_classes] cosine similarities
};

struct LinearProbeResult {
    double auc = 0.0;  ///< macro one-vs-rest AUC over test logits
    double f1 = 0.0;   ///< macro F1 over argmax predictions
    Tensor weight;     ///< [feature_dim, num_classes]
    Tensor bias;       ///< [num_classes]
    std::vector<PerClassMetrics> per_class;
};

/// Probability that a random positive's score outranks a random negative's,
/// ties counted half. Computed by the midrank formula in integer arithmetic,
/// so it equals brute-force pair counting exactly.
/// pre: at least one positive and one negative, else UndefinedMetricError.
double auc_ovr(std::span<const double> scores, const std::vector<bool>& positives);

/// Unweighted mean of one-vs-rest F1 over all classes. A class with no true
/// and no predicted instances contributes 0 (callers can detect those via
/// f1_per_class). Per-class F1 = 2tp / (2tp + fp + fn), one division.
double f1_macro(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes);

/// Per-class F1 plus a flag marking classes that never occurred (no true,
/// no predicted instance) whose 0 is a convention rather than a score.
struct F1PerClass {
    std::vector<double> f1;
    std::vector<bool> vacuous;
};
F1PerClass f1_per_class(const std::vector<int>& pred, const std::vector<int>& truth,
                        int num_classes);

/// Row-wise cosine similarity between two unnormalized embedding sets:
/// scores[i][j] = <a_i/|a_i|, b_j/|b_j|>. Shared by the zero-shot pipeline
/// and its rescaling-invariance check.
std::vector<std::vector<double>> cosine_scores(const Tensor& a, const Tensor& b);

/// Argmax per row; ties go to the lowest index.
std::vector<int> argmax_rows(const std::vector<std::vector<double>>& scores);

/// Prompt-based zero-shot classification: embed each rendered prompt once
/// (text encoder + projector + normalize), embed each record's signal
/// (eval-mode BN), score by cosine similarity, predict by argmax.
/// pre: records non-empty and labeled; label ids < taxonomy size.
ZeroShotResult zero_shot_classify(EtpModel& model, const PromptSet& prompts,
                                  const std::vector<EcgRecord>& records);

/// Linear evaluation: extract pre-projection encoder features once for every
/// record (eval mode), then train an affine softmax classifier with Adam
/// (weight decay 0) on the train split and report macro AUC / macro F1 on
/// the test split. Encoder parameters are never touched; callers can verify
/// them bitwise before/after.
LinearProbeResult linear_probe(EtpModel& model, const std::vector<EcgRecord>& train,
                               const std::vector<EcgRecord>& test, int num_classes, int epochs,
                               double lr, int batch_size, std::uint64_t seed);

/// Report serialization (JSON plus a plain-text table with one row per
/// class and an Average row).
std::string zero_shot_report_json(const ZeroShotResult& result, const std::string& config_echo,
                                  const std::string& checkpoint_id);
std::string zero_shot_report_text(const ZeroShotResult& result);
std::string probe_report_json(const LinearProbeResult& result, const std::string& config_echo,
                              const std::string& checkpoint_id);
std::string probe_report_text(const LinearProbeResult& result);

}  // namespace etp
