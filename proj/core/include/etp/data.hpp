#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "etp/errors.hpp"

namespace etp {

/// One 12-lead recording with its report text. signal is row-major
/// [leads, length] in millivolts.
struct EcgRecord {
    std::string id;
    int leads = 12;
    int length = 0;
    std::vector<double> signal;
    int sampling_rate_hz = 500;
    std::string report;
    std::optional<int> label;

    double sample(int lead, int t) const { return signal[static_cast<std::size_t>(lead) * length + t]; }
};

/// Ordered class list: (code, display name). Display names are what the
/// prompt template interpolates; codes label reports and JSON output.
struct LabelTaxonomy {
    std::string name;
    std::vector<std::pair<std::string, std::string>> classes;

    static LabelTaxonomy ptbxl5();
    static LabelTaxonomy cpsc9();
    static LabelTaxonomy by_name(const std::string& name);  ///< ConfigError on unknown

    int size() const { return static_cast<int>(classes.size()); }
};

/// A template with one {disease} slot, rendered once per class.
struct PromptSet {
    std::string template_text;
    LabelTaxonomy taxonomy;
    std::vector<std::string> rendered;

    static constexpr const char* kDefaultTemplate = "this ECG indicates {disease}";
    static PromptSet render(const std::string& template_text, const LabelTaxonomy& taxonomy);
};

/// Precomputed text embeddings keyed by id (the import path for real
/// language-model vectors). Values are float32 and returned verbatim.
struct ExternalEmbeddingTable {
    int dim = 0;
    std::map<std::string, std::vector<float>> entries;
};

/// Either fractions (shuffled split, seeded) or explicit id lists. When any
/// id list is non-empty the lists are authoritative: listed records go to
/// their split, unlisted records are dropped.
struct SplitSpec {
    double train_frac = 0.8;
    double val_frac = 0.1;
    double test_frac = 0.1;
    std::vector<std::string> train_ids, val_ids, test_ids;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<EcgRecord> train, val, test;
};

/// Deterministic synthetic corpus: class c's signal is a shared sinusoidal
/// pseudo-ECG plus a class-specific motif (distinct frequency band and
/// localized bump morphology), mixed into 12 correlated leads, plus noise;
/// its report embeds the class's clinical phrase in one of several template
/// phrasings plus distractor clauses. Labels are assigned round-robin and
/// then shuffled. Fully determined by (n, taxonomy, length_samples, seed).
/// pre: n >= taxonomy size, length_samples >= 256.
std::vector<EcgRecord> generate_synthetic(int n, const LabelTaxonomy& taxonomy,
                                          int length_samples, std::uint64_t seed);

/// JSONL: one object per line, keys id, signal (12 arrays), fs, report,
/// label (int or null; or an int array when ingesting multi-label sources —
/// then drop_multilabel=true keeps single-label rows and drops the rest).
/// ParseError names the offending line; SchemaError reports shape issues.
std::vector<EcgRecord> load_jsonl(const std::string& path, bool drop_multilabel = false);
void save_jsonl(const std::vector<EcgRecord>& records, const std::string& path);

/// TSV: header "dim\t<d>", then one "id\tbase64(little-endian float32[d])"
/// per line.
ExternalEmbeddingTable load_embedding_table(const std::string& path);
void save_embedding_table(const ExternalEmbeddingTable& table, const std::string& path);

/// Deterministic disjoint partition. Fraction mode shuffles ids under
/// spec.seed; a positive fraction that yields an empty part is a
/// ConfigError. Explicit-list mode assigns listed ids verbatim (unknown or
/// duplicated ids are ConfigError).
SplitResult split(const std::vector<EcgRecord>& records, const SplitSpec& spec);

}  // namespace etp
