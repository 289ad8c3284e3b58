#include "etp/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "etp/rng.hpp"
#include "etp/trainer.hpp"

namespace etp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics

double auc_ovr(std::span<const double> scores, const std::vector<bool>& positives) {
    const std::size_t n = scores.size();
    if (positives.size() != n) throw DimensionError("auc_ovr: scores/positives length mismatch");
    std::int64_t pos = 0;
    for (bool p : positives) pos += p ? 1 : 0;
    const std::int64_t neg = static_cast<std::int64_t>(n) - pos;
    if (pos == 0 || neg == 0)
        throw UndefinedMetricError("auc_ovr: needs at least one positive and one negative");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Midrank formula in integers: with 1-based ranks and doubled midranks
    // (a tie group over ranks a..b has 2*midrank = a + b),
    //   2U = sum over positives of 2*midrank  -  P*(P+1)
    // equals brute-force pair counting with wins worth 2 and ties worth 1.
    std::int64_t two_u = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const std::int64_t two_midrank = static_cast<std::int64_t>(i + 1) +
                                         static_cast<std::int64_t>(j + 1);
        for (std::size_t k = i; k <= j; ++k)
            if (positives[order[k]]) two_u += two_midrank;
        i = j + 1;
    }
    two_u -= pos * (pos + 1);
    return static_cast<double>(two_u) / static_cast<double>(2 * pos * neg);
}

F1PerClass f1_per_class(const std::vector<int>& pred, const std::vector<int>& truth,
                        int num_classes) {
    if (pred.size() != truth.size()) throw DimensionError("f1: pred/truth length mismatch");
    if (pred.empty()) throw ContractError("f1: empty input");
    if (num_classes < 1) throw ContractError("f1: num_classes must be >= 1");
    std::vector<std::int64_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= num_classes || truth[i] < 0 || truth[i] >= num_classes)
            throw ContractError("f1: class id out of range");
        if (pred[i] == truth[i]) {
            ++tp[pred[i]];
        } else {
            ++fp[pred[i]];
            ++fn[truth[i]];
        }
    }
    F1PerClass out;
    out.f1.resize(num_classes);
    out.vacuous.resize(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        const std::int64_t denom = 2 * tp[c] + fp[c] + fn[c];
        out.vacuous[c] = denom == 0;
        out.f1[c] = denom == 0 ? 0.0
                               : static_cast<double>(2 * tp[c]) / static_cast<double>(denom);
    }
    return out;
}

double f1_macro(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes) {
    const F1PerClass per = f1_per_class(pred, truth, num_classes);
    double acc = 0.0;
    for (double f : per.f1) acc += f;
    return acc / num_classes;
}

// ---------------------------------------------------------------------------
// Cosine scoring

std::vector<std::vector<double>> cosine_scores(const Tensor& a, const Tensor& b) {
    if (!a.defined() || !b.defined() || a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw DimensionError("cosine_scores: expects [N,d] and [C,d]");
    const int n = a.dim(0), c = b.dim(0), d = a.dim(1);
    auto normalize = [d](const Tensor& t) {
        const auto x = t.values();
        std::vector<double> out(x.begin(), x.end());
        for (int i = 0; i < t.dim(0); ++i) {
            double* row = out.data() + static_cast<std::size_t>(i) * d;
            double sq = 0.0;
            for (int j = 0; j < d; ++j) sq += row[j] * row[j];
            const double norm = std::sqrt(sq);
            if (norm <= 1e-12)
                throw NumericDomainError("cosine_scores: row " + std::to_string(i) +
                                         " has near-zero norm");
            for (int j = 0; j < d; ++j) row[j] /= norm;
        }
        return out;
    };
    const std::vector<double> an = normalize(a), bn = normalize(b);
    std::vector<std::vector<double>> scores(n, std::vector<double>(c, 0.0));
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < c; ++k) {
            double dot = 0.0;
            const double* ra = an.data() + static_cast<std::size_t>(i) * d;
            const double* rb = bn.data() + static_cast<std::size_t>(k) * d;
            for (int j = 0; j < d; ++j) dot += ra[j] * rb[j];
            scores[i][k] = dot;
        }
    return scores;
}

std::vector<int> argmax_rows(const std::vector<std::vector<double>>& scores) {
    std::vector<int> out;
    out.reserve(scores.size());
    for (const auto& row : scores) {
        if (row.empty()) throw ContractError("argmax_rows: empty score row");
        int best = 0;
        for (int j = 1; j < static_cast<int>(row.size()); ++j)
            if (row[j] > row[best]) best = j;  // ties keep the lowest index
        out.push_back(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Zero-shot pipeline

namespace {

constexpr int kEvalChunk = 32;

// Unnormalized joint-space projections of record signals, eval-mode BN,
// evaluated in fixed-size chunks.
std::vector<std::vector<double>> ecg_projections(EtpModel& model,
                                                 const std::vector<EcgRecord>& records) {
    std::vector<std::vector<double>> rows;
    rows.reserve(records.size());
    std::vector<int> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t first = 0; first < records.size(); first += kEvalChunk) {
        const int count = static_cast<int>(std::min<std::size_t>(kEvalChunk,
                                                                 records.size() - first));
        Graph g;
        Tensor x = batch_signals(records, order, static_cast<int>(first), count);
        Tensor proj = model.project_ecg(g, model.ecg_features(g, x, Mode::Eval));
        const auto values = proj.values();
        const int d = proj.dim(1);
        for (int i = 0; i < count; ++i)
            rows.emplace_back(values.begin() + static_cast<std::size_t>(i) * d,
                              values.begin() + static_cast<std::size_t>(i + 1) * d);
    }
    return rows;
}

std::vector<std::vector<double>> feature_rows(EtpModel& model,
                                              const std::vector<EcgRecord>& records) {
    std::vector<std::vector<double>> rows;
    rows.reserve(records.size());
    std::vector<int> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t first = 0; first < records.size(); first += kEvalChunk) {
        const int count = static_cast<int>(std::min<std::size_t>(kEvalChunk,
                                                                 records.size() - first));
        Graph g;
        Tensor x = batch_signals(records, order, static_cast<int>(first), count);
        Tensor feats = model.ecg_features(g, x, Mode::Eval);
        const auto values = feats.values();
        const int d = feats.dim(1);
        for (int i = 0; i < count; ++i)
            rows.emplace_back(values.begin() + static_cast<std::size_t>(i) * d,
                              values.begin() + static_cast<std::size_t>(i + 1) * d);
    }
    return rows;
}

Tensor rows_to_tensor(const std::vector<std::vector<double>>& rows) {
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows.front().size());
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(n) * d);
    for (const auto& row : rows) flat.insert(flat.end(), row.begin(), row.end());
    return Tensor::from_data({n, d}, std::move(flat));
}

std::vector<int> require_labels(const std::vector<EcgRecord>& records, int num_classes,
                                const char* op) {
    std::vector<int> labels;
    labels.reserve(records.size());
    for (const EcgRecord& r : records) {
        if (!r.label)
            throw ContractError(std::string(op) + ": record '" + r.id + "' has no label");
        if (*r.label < 0 || *r.label >= num_classes)
            throw ContractError(std::string(op) + ": record '" + r.id + "' label " +
                                std::to_string(*r.label) + " outside taxonomy of " +
                                std::to_string(num_classes));
        labels.push_back(*r.label);
    }
    return labels;
}

std::optional<double> average_defined(const std::vector<PerClassMetrics>& per_class,
                                      std::optional<double> PerClassMetrics::* field) {
    double acc = 0.0;
    int count = 0;
    for (const auto& m : per_class)
        if (m.*field) {
            acc += *(m.*field);
            ++count;
        }
    if (count == 0) return std::nullopt;
    return acc / count;
}

}  // namespace

ZeroShotResult zero_shot_classify(EtpModel& model, const PromptSet& prompts,
                                  const std::vector<EcgRecord>& records) {
    if (records.empty()) throw ContractError("zero_shot_classify: no records");
    const int C = prompts.taxonomy.size();
    if (static_cast<int>(prompts.rendered.size()) != C)
        throw ContractError("zero_shot_classify: prompts not rendered");
    const std::vector<int> truth = require_labels(records, C, "zero_shot_classify");

    // Each prompt is embedded once; records in chunks. Scoring normalizes
    // both sides, so these stay unnormalized here.
    Graph g;
    TokenBatch prompt_tokens = tokenize_batch(model.vocab(), prompts.rendered, 64);
    Tensor prompt_proj = model.project_text(g, model.text_features(g, prompt_tokens));
    Tensor record_proj = rows_to_tensor(ecg_projections(model, records));

    ZeroShotResult result;
    result.scores = cosine_scores(record_proj, prompt_proj);
    result.predicted = argmax_rows(result.scores);
    for (const EcgRecord& r : records) result.record_ids.push_back(r.id);

    const int n = static_cast<int>(records.size());
    const F1PerClass f1s = f1_per_class(result.predicted, truth, C);
    for (int c = 0; c < C; ++c) {
        PerClassMetrics m;
        m.code = prompts.taxonomy.classes[c].first;
        m.display_name = prompts.taxonomy.classes[c].second;
        std::int64_t support = 0, hits = 0;
        for (int i = 0; i < n; ++i)
            if (truth[i] == c) {
                ++support;
                if (result.predicted[i] == c) ++hits;
            }
        m.support = static_cast<int>(support);
        if (support > 0) {
            m.acc = static_cast<double>(hits) / static_cast<double>(support);
            m.f1 = f1s.f1[c];
            if (support < n) {
                std::vector<double> column(n);
                std::vector<bool> positives(n);
                for (int i = 0; i < n; ++i) {
                    column[i] = result.scores[i][c];
                    positives[i] = truth[i] == c;
                }
                m.auc = auc_ovr(column, positives);
            }
        }
        result.per_class.push_back(std::move(m));
    }
    result.avg_auc = average_defined(result.per_class, &PerClassMetrics::auc);
    result.avg_acc = average_defined(result.per_class, &PerClassMetrics::acc);
    result.avg_f1 = average_defined(result.per_class, &PerClassMetrics::f1);
    return result;
}

// ---------------------------------------------------------------------------
// Linear probe

LinearProbeResult linear_probe(EtpModel& model, const std::vector<EcgRecord>& train,
                               const std::vector<EcgRecord>& test, int num_classes, int epochs,
                               double lr, int batch_size, std::uint64_t seed) {
    if (train.empty() || test.empty()) throw ContractError("linear_probe: empty split");
    if (epochs < 0 || batch_size < 1 || lr <= 0.0)
        throw ContractError("linear_probe: bad optimization settings");
    const std::vector<int> train_labels = require_labels(train, num_classes, "linear_probe");
    const std::vector<int> test_labels = require_labels(test, num_classes, "linear_probe");

    // Features are extracted once with frozen parameters; the probe's graph
    // only ever sees these constant tensors, so the encoder cannot change.
    const std::vector<std::vector<double>> train_feats = feature_rows(model, train);
    const std::vector<std::vector<double>> test_feats = feature_rows(model, test);
    const int F = static_cast<int>(train_feats.front().size());

    Rng init_rng = Rng::derive(seed, {0x11EA});
    const double limit = 1.0 / std::sqrt(static_cast<double>(F));
    Tensor w = Tensor::zeros({F, num_classes}, true);
    for (double& v : w.raw_values()) v = init_rng.uniform(-limit, limit);
    w.quantize_f32();
    Tensor b = Tensor::zeros({num_classes}, true);
    for (double& v : b.raw_values()) v = init_rng.uniform(-limit, limit);
    b.quantize_f32();

    AdamConfig adam_cfg;
    adam_cfg.lr = lr;
    adam_cfg.weight_decay = 0.0;
    Adam adam({{"probe.w", w}, {"probe.b", b}}, adam_cfg);

    const int n = static_cast<int>(train_feats.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng shuffle_rng = Rng::derive(seed, {0x9B0E, static_cast<std::uint64_t>(epoch)});
        std::iota(order.begin(), order.end(), 0);
        shuffle_rng.shuffle(order);
        for (int first = 0; first < n; first += batch_size) {
            const int count = std::min(batch_size, n - first);
            std::vector<double> flat;
            flat.reserve(static_cast<std::size_t>(count) * F);
            std::vector<int> labels(count);
            for (int i = 0; i < count; ++i) {
                const auto& row = train_feats[order[first + i]];
                flat.insert(flat.end(), row.begin(), row.end());
                labels[i] = train_labels[order[first + i]];
            }
            Graph g;
            Tensor x = Tensor::from_data({count, F}, std::move(flat));
            Tensor logits = g.add_bias_rows(g.matmul(x, w), b);
            Tensor loss = g.mean(g.sub(g.log_sum_exp_rows(logits), g.take_per_row(logits, labels)));
            g.backward(loss);
            adam.step();
            adam.zero_grad();
        }
    }

    // Test logits and metrics.
    const int nt = static_cast<int>(test_feats.size());
    std::vector<std::vector<double>> logits(nt, std::vector<double>(num_classes));
    const auto wv = w.values();
    const auto bv = b.values();
    for (int i = 0; i < nt; ++i)
        for (int c = 0; c < num_classes; ++c) {
            double acc = bv[c];
            for (int j = 0; j < F; ++j)
                acc += test_feats[i][j] * wv[static_cast<std::size_t>(j) * num_classes + c];
            logits[i][c] = acc;
        }

    LinearProbeResult result;
    result.weight = w;
    result.bias = b;
    std::vector<int> predicted = argmax_rows(logits);
    result.f1 = f1_macro(predicted, test_labels, num_classes);
    const F1PerClass f1s = f1_per_class(predicted, test_labels, num_classes);
    for (int c = 0; c < num_classes; ++c) {
        PerClassMetrics m;
        m.code = "class" + std::to_string(c);
        std::int64_t support = 0, hits = 0;
        for (int i = 0; i < nt; ++i)
            if (test_labels[i] == c) {
                ++support;
                if (predicted[i] == c) ++hits;
            }
        m.support = static_cast<int>(support);
        if (support > 0) {
            m.acc = static_cast<double>(hits) / static_cast<double>(support);
            m.f1 = f1s.f1[c];
            if (support < nt) {
                std::vector<double> column(nt);
                std::vector<bool> positives(nt);
                for (int i = 0; i < nt; ++i) {
                    column[i] = logits[i][c];
                    positives[i] = test_labels[i] == c;
                }
                m.auc = auc_ovr(column, positives);
            }
        }
        result.per_class.push_back(std::move(m));
    }
    const std::optional<double> macro_auc =
        average_defined(result.per_class, &PerClassMetrics::auc);
    if (!macro_auc)
        throw UndefinedMetricError("linear_probe: no class has both positives and negatives");
    result.auc = *macro_auc;
    return result;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json config_echo_json(const std::string& config_echo) {
    if (config_echo.empty()) return json(nullptr);
    try {
        return json::parse(config_echo);
    } catch (const json::exception&) {
        return json(config_echo);
    }
}

json metric_or_null(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string format_metric(const std::optional<double>& v) {
    if (!v) return "    --";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%6.3f", *v);
    return buf;
}

std::string per_class_table(const std::vector<PerClassMetrics>& per_class,
                            const std::optional<double>& avg_auc,
                            const std::optional<double>& avg_acc,
                            const std::optional<double>& avg_f1) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-36s %8s %6s %6s %6s\n", "class", "support", "AUC",
                  "ACC", "F1");
    os << line;
    for (const auto& m : per_class) {
        const std::string name = m.display_name.empty() ? m.code : m.display_name;
        std::snprintf(line, sizeof line, "%-36s %8d %s %s %s\n", name.c_str(), m.support,
                      format_metric(m.auc).c_str(), format_metric(m.acc).c_str(),
                      format_metric(m.f1).c_str());
        os << line;
    }
    std::snprintf(line, sizeof line, "%-36s %8s %s %s %s\n", "Average", "",
                  format_metric(avg_auc).c_str(), format_metric(avg_acc).c_str(),
                  format_metric(avg_f1).c_str());
    os << line;
    return os.str();
}

json per_class_json(const std::vector<PerClassMetrics>& per_class) {
    json arr = json::array();
    for (const auto& m : per_class)
        arr.push_back({{"code", m.code},
                       {"display_name", m.display_name},
                       {"support", m.support},
                       {"auc", metric_or_null(m.auc)},
                       {"acc", metric_or_null(m.acc)},
                       {"f1", metric_or_null(m.f1)}});
    return arr;
}

}  // namespace

std::string zero_shot_report_json(const ZeroShotResult& result, const std::string& config_echo,
                                  const std::string& checkpoint_id) {
    json predictions = json::array();
    for (std::size_t i = 0; i < result.record_ids.size(); ++i)
        predictions.push_back({{"id", result.record_ids[i]}, {"predicted", result.predicted[i]}});
    json report{{"kind", "zeroshot"},
                {"checkpoint", checkpoint_id},
                {"config", config_echo_json(config_echo)},
                {"per_class", per_class_json(result.per_class)},
                {"average",
                 {{"auc", metric_or_null(result.avg_auc)},
                  {"acc", metric_or_null(result.avg_acc)},
                  {"f1", metric_or_null(result.avg_f1)}}},
                {"predictions", std::move(predictions)}};
    return report.dump(2) + "\n";
}

std::string zero_shot_report_text(const ZeroShotResult& result) {
    return per_class_table(result.per_class, result.avg_auc, result.avg_acc, result.avg_f1);
}

std::string probe_report_json(const LinearProbeResult& result, const std::string& config_echo,
                              const std::string& checkpoint_id) {
    json report{{"kind", "linear-eval"},
                {"checkpoint", checkpoint_id},
                {"config", config_echo_json(config_echo)},
                {"per_class", per_class_json(result.per_class)},
                {"auc", result.auc},
                {"f1", result.f1}};
    return report.dump(2) + "\n";
}

std::string probe_report_text(const LinearProbeResult& result) {
    std::ostringstream os;
    char line[96];
    std::snprintf(line, sizeof line, "macro AUC %6.3f\nmacro F1  %6.3f\n", result.auc, result.f1);
    os << line;
    os << per_class_table(result.per_class, std::nullopt, std::nullopt, std::nullopt);
    return os.str();
}

}  // namespace etp
