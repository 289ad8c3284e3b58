#include "etp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "etp/rng.hpp"

namespace etp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Taxonomies / prompts

LabelTaxonomy LabelTaxonomy::ptbxl5() {
    return {"ptbxl5",
            {{"NORM", "normal ECG"},
             {"MI", "myocardial infarction"},
             {"STTC", "ST/T change"},
             {"CD", "conduction disturbance"},
             {"HYP", "hypertrophy"}}};
}

LabelTaxonomy LabelTaxonomy::cpsc9() {
    return {"cpsc9",
            {{"Normal", "normal ECG"},
             {"AF", "atrial fibrillation"},
             {"I-AVB", "first-degree atrioventricular block"},
             {"LBBB", "left bundle branch block"},
             {"RBBB", "right bundle branch block"},
             {"PAC", "premature atrial contraction"},
             {"PVC", "premature ventricular contraction"},
             {"STD", "ST-segment depression"},
             {"STE", "ST-segment elevation"}}};
}

LabelTaxonomy LabelTaxonomy::by_name(const std::string& name) {
    if (name == "ptbxl5") return ptbxl5();
    if (name == "cpsc9") return cpsc9();
    throw ConfigError("unknown taxonomy '" + name + "' (expected ptbxl5 or cpsc9)");
}

PromptSet PromptSet::render(const std::string& template_text, const LabelTaxonomy& taxonomy) {
    const std::string slot = "{disease}";
    const std::size_t pos = template_text.find(slot);
    if (pos == std::string::npos)
        throw ConfigError("prompt template must contain a {disease} slot");
    PromptSet set{template_text, taxonomy, {}};
    for (const auto& [code, display] : taxonomy.classes) {
        std::string line = template_text;
        line.replace(pos, slot.size(), display);
        set.rendered.push_back(std::move(line));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

double gauss_bump(double t, double center, double width) {
    const double u = (t - center) / width;
    return std::exp(-0.5 * u * u);
}

const std::vector<std::string>& report_phrasings() {
    static const std::vector<std::string> kPhrasings = {
        "the ecg shows {phrase}",
        "findings consistent with {phrase}",
        "impression: {phrase}",
        "tracing suggests {phrase}",
    };
    return kPhrasings;
}

const std::vector<std::string>& distractor_pool() {
    static const std::vector<std::string> kPool = {
        "sinus rhythm present",
        "normal axis",
        "no other acute changes",
        "rate within normal limits",
        "technically adequate recording",
        "comparison with prior advised",
        "borderline voltage criteria",
        "intervals otherwise unremarkable",
    };
    return kPool;
}

std::string substitute(const std::string& tmpl, const std::string& phrase) {
    std::string out = tmpl;
    const std::size_t pos = out.find("{phrase}");
    out.replace(pos, 8, phrase);
    return out;
}

}  // namespace

std::vector<EcgRecord> generate_synthetic(int n, const LabelTaxonomy& taxonomy,
                                          int length_samples, std::uint64_t seed) {
    const int C = taxonomy.size();
    if (C < 1) throw ContractError("generate_synthetic: taxonomy is empty");
    if (n < C) throw ContractError("generate_synthetic: n must be >= the class count");
    if (length_samples < 256)
        throw ContractError("generate_synthetic: length_samples must be >= 256");

    const int L = length_samples;
    const int fs = 500;
    const int leads = 12;
    Rng rng(seed);

    // Round-robin labels, then shuffled: every class count is n/C (+-1).
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = i % C;
    rng.shuffle(labels);

    std::vector<EcgRecord> records;
    records.reserve(n);
    std::vector<double> shared(L);
    for (int i = 0; i < n; ++i) {
        const int c = labels[i];

        // Per-record draws, in pinned order.
        const double heart_rate = rng.uniform(55.0, 95.0);
        const double period = 60.0 / heart_rate * fs;  // samples per beat
        const double phase0 = rng.uniform(0.0, period);
        const double wander_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double wander_amp = rng.uniform(0.05, 0.15);
        const double motif_amp = c == 0 ? 0.0 : rng.uniform(0.9, 1.3);
        const double center_jitter = rng.uniform(-0.05, 0.05);

        // Shared waveform: P-QRS-T pseudo-beats + baseline wander + the
        // class motif (a class-specific frequency in a class-specific
        // window, plus a localized bump).
        const double motif_freq = 4.0 + 2.3 * c;
        const double motif_center = (static_cast<double>(c) + 1.0) / (C + 1) + center_jitter;
        const double motif_width = 0.12 * L;
        for (int t = 0; t < L; ++t) {
            double v = wander_amp * std::sin(2.0 * std::numbers::pi * 0.33 * t / fs + wander_phase);
            for (double beat = phase0 - period; beat < L + period; beat += period) {
                v += 0.15 * gauss_bump(t, beat - 0.16 * fs, 0.025 * fs);  // P
                v += gauss_bump(t, beat, 0.012 * fs);                     // QRS
                v += 0.3 * gauss_bump(t, beat + 0.20 * fs, 0.05 * fs);    // T
            }
            if (motif_amp > 0.0) {
                const double window = gauss_bump(t, motif_center * L, motif_width);
                v += motif_amp * window *
                     std::sin(2.0 * std::numbers::pi * motif_freq * t / fs);
                v += 0.5 * motif_amp * gauss_bump(t, motif_center * L, 0.03 * L);
            }
            shared[t] = v;
        }

        EcgRecord rec;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "syn-%06d", i);
        rec.id = idbuf;
        rec.leads = leads;
        rec.length = L;
        rec.sampling_rate_hz = fs;
        rec.label = c;
        rec.signal.resize(static_cast<std::size_t>(leads) * L);

        const double noise_sigma = 0.1 * (motif_amp > 0.0 ? motif_amp : 1.0);
        for (int j = 0; j < leads; ++j) {
            const double w = rng.uniform(0.5, 1.5);
            double* row = rec.signal.data() + static_cast<std::size_t>(j) * L;
            for (int t = 0; t < L; ++t) row[t] = w * shared[t];
        }
        for (double& v : rec.signal) v += noise_sigma * rng.normal();
        // Keep stored signals on the float32 grid (compact JSON, exact
        // round-trips).
        for (double& v : rec.signal) v = static_cast<double>(static_cast<float>(v));

        const auto& phrasings = report_phrasings();
        const auto& pool = distractor_pool();
        std::string report =
            substitute(phrasings[rng.below(phrasings.size())], taxonomy.classes[c].second);
        const int extras = 1 + static_cast<int>(rng.below(3));
        for (int k = 0; k < extras; ++k) report += "; " + pool[rng.below(pool.size())];
        rec.report = std::move(report);

        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// JSONL records

std::vector<EcgRecord> load_jsonl(const std::string& path, bool drop_multilabel) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::vector<EcgRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        const std::string where = path + ":" + std::to_string(line_no);
        if (!obj.is_object() || !obj.contains("id") || !obj.contains("signal") ||
            !obj.contains("fs") || !obj.contains("report") || !obj.contains("label"))
            throw SchemaError(where + ": record needs keys id, signal, fs, report, label");

        EcgRecord rec;
        try {
            rec.id = obj.at("id").get<std::string>();
            rec.sampling_rate_hz = obj.at("fs").get<int>();
            rec.report = obj.at("report").get<std::string>();

            const json& sig = obj.at("signal");
            if (!sig.is_array() || sig.size() != 12)
                throw SchemaError(where + ": expected 12 leads, got " +
                                  std::to_string(sig.is_array() ? sig.size() : 0));
            rec.leads = 12;
            rec.length = -1;
            for (const json& lead : sig) {
                if (!lead.is_array() || lead.empty())
                    throw SchemaError(where + ": each lead must be a non-empty array");
                if (rec.length < 0)
                    rec.length = static_cast<int>(lead.size());
                else if (static_cast<int>(lead.size()) != rec.length)
                    throw SchemaError(where + ": leads have differing lengths");
                for (const json& v : lead) {
                    const double d = v.get<double>();
                    if (!std::isfinite(d)) throw SchemaError(where + ": non-finite sample");
                    rec.signal.push_back(d);
                }
            }

            const json& label = obj.at("label");
            if (label.is_null()) {
                rec.label = std::nullopt;
            } else if (label.is_number_integer()) {
                rec.label = label.get<int>();
            } else if (label.is_array()) {
                if (!drop_multilabel)
                    throw SchemaError(where + ": multi-label records need drop_multilabel");
                if (label.size() != 1) continue;  // drop multi-label rows
                rec.label = label.at(0).get<int>();
            } else {
                throw SchemaError(where + ": label must be null, an int, or an int array");
            }
        } catch (const json::exception& e) {
            // Wrong value types surface as schema problems, not raw library
            // errors.
            throw SchemaError(where + ": " + e.what());
        }
        records.push_back(std::move(rec));
    }
    return records;
}

void save_jsonl(const std::vector<EcgRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    for (const EcgRecord& rec : records) {
        json sig = json::array();
        for (int j = 0; j < rec.leads; ++j) {
            json lead = json::array();
            for (int t = 0; t < rec.length; ++t) lead.push_back(rec.sample(j, t));
            sig.push_back(std::move(lead));
        }
        json obj{{"id", rec.id},
                 {"signal", std::move(sig)},
                 {"fs", rec.sampling_rate_hz},
                 {"report", rec.report}};
        obj["label"] = rec.label ? json(*rec.label) : json(nullptr);
        out << obj.dump() << '\n';
    }
    if (!out) throw ParseError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Embedding table (TSV + base64 float32 payloads)

namespace {

const char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const unsigned char* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        unsigned int word = data[i] << 16;
        if (i + 1 < len) word |= data[i + 1] << 8;
        if (i + 2 < len) word |= data[i + 2];
        out.push_back(kB64Alphabet[(word >> 18) & 63]);
        out.push_back(kB64Alphabet[(word >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64Alphabet[(word >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64Alphabet[word & 63] : '=');
    }
    return out;
}

std::vector<unsigned char> b64_decode(const std::string& text, const std::string& where) {
    static const auto value_of = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) throw ParseError(where + ": base64 length not a multiple of 4");
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int pad = 0;
        unsigned int word = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            if (c == '=') {
                if (i + 4 != text.size() || k < 2) throw ParseError(where + ": stray padding");
                ++pad;
                word <<= 6;
                continue;
            }
            if (pad > 0) throw ParseError(where + ": data after padding");
            const int v = value_of(c);
            if (v < 0) throw ParseError(where + ": invalid base64 character");
            word = (word << 6) | static_cast<unsigned int>(v);
        }
        out.push_back(static_cast<unsigned char>((word >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<unsigned char>((word >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<unsigned char>(word & 0xff));
    }
    return out;
}

}  // namespace

ExternalEmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": missing header");
    ExternalEmbeddingTable table;
    {
        std::istringstream hs(line);
        std::string key;
        if (!std::getline(hs, key, '\t') || key != "dim" || !(hs >> table.dim) || table.dim < 1)
            throw ParseError(path + ":1: header must be 'dim<TAB><positive int>'");
    }
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(where + ": expected 'id<TAB>base64'");
        const std::string id = line.substr(0, tab);
        const std::vector<unsigned char> bytes = b64_decode(line.substr(tab + 1), where);
        if (bytes.size() != static_cast<std::size_t>(table.dim) * 4)
            throw SchemaError(where + ": payload holds " + std::to_string(bytes.size() / 4) +
                              " floats, header says " + std::to_string(table.dim));
        std::vector<float> vec(table.dim);
        for (int i = 0; i < table.dim; ++i) {
            std::uint32_t word = static_cast<std::uint32_t>(bytes[i * 4]) |
                                 static_cast<std::uint32_t>(bytes[i * 4 + 1]) << 8 |
                                 static_cast<std::uint32_t>(bytes[i * 4 + 2]) << 16 |
                                 static_cast<std::uint32_t>(bytes[i * 4 + 3]) << 24;
            float f;
            static_assert(sizeof f == 4);
            std::memcpy(&f, &word, 4);
            vec[i] = f;
        }
        if (!table.entries.emplace(id, std::move(vec)).second)
            throw SchemaError(where + ": duplicate id '" + id + "'");
    }
    return table;
}

void save_embedding_table(const ExternalEmbeddingTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path + "' for writing");
    out << "dim\t" << table.dim << '\n';
    std::vector<unsigned char> bytes;
    for (const auto& [id, vec] : table.entries) {
        if (static_cast<int>(vec.size()) != table.dim)
            throw SchemaError("embedding '" + id + "' has wrong length");
        bytes.resize(vec.size() * 4);
        for (std::size_t i = 0; i < vec.size(); ++i) {
            std::uint32_t word;
            std::memcpy(&word, &vec[i], 4);
            bytes[i * 4] = static_cast<unsigned char>(word & 0xff);
            bytes[i * 4 + 1] = static_cast<unsigned char>((word >> 8) & 0xff);
            bytes[i * 4 + 2] = static_cast<unsigned char>((word >> 16) & 0xff);
            bytes[i * 4 + 3] = static_cast<unsigned char>((word >> 24) & 0xff);
        }
        out << id << '\t' << b64_encode(bytes.data(), bytes.size()) << '\n';
    }
    if (!out) throw ParseError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Splits

SplitResult split(const std::vector<EcgRecord>& records, const SplitSpec& spec) {
    if (records.empty()) throw ContractError("split: no records");

    SplitResult result;
    const bool explicit_mode =
        !spec.train_ids.empty() || !spec.val_ids.empty() || !spec.test_ids.empty();
    if (explicit_mode) {
        std::map<std::string, const EcgRecord*> by_id;
        for (const EcgRecord& r : records)
            if (!by_id.emplace(r.id, &r).second)
                throw ConfigError("split: duplicate record id '" + r.id + "'");
        std::map<std::string, int> seen;
        auto take = [&](const std::vector<std::string>& ids, std::vector<EcgRecord>& dst) {
            for (const std::string& id : ids) {
                auto it = by_id.find(id);
                if (it == by_id.end()) throw ConfigError("split: unknown id '" + id + "'");
                if (!seen.emplace(id, 1).second)
                    throw ConfigError("split: id '" + id + "' listed twice");
                dst.push_back(*it->second);
            }
        };
        take(spec.train_ids, result.train);
        take(spec.val_ids, result.val);
        take(spec.test_ids, result.test);
        return result;
    }

    const double frac[3] = {spec.train_frac, spec.val_frac, spec.test_frac};
    for (double f : frac)
        if (f < 0.0) throw ConfigError("split: fractions must be non-negative");
    if (std::abs(frac[0] + frac[1] + frac[2] - 1.0) > 1e-9)
        throw ConfigError("split: fractions must sum to 1");

    const int n = static_cast<int>(records.size());
    int n_train = static_cast<int>(std::llround(frac[0] * n));
    int n_val = static_cast<int>(std::llround(frac[1] * n));
    if (n_train + n_val > n) n_val = n - n_train;
    const int n_test = n - n_train - n_val;
    const int sizes[3] = {n_train, n_val, n_test};
    for (int k = 0; k < 3; ++k)
        if (frac[k] > 0.0 && sizes[k] == 0)
            throw ConfigError("split: fraction " + std::to_string(frac[k]) +
                              " yields an empty partition for " + std::to_string(n) + " records");

    std::vector<int> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(spec.seed);
    rng.shuffle(order);
    for (int i = 0; i < n; ++i) {
        const EcgRecord& r = records[order[i]];
        if (i < n_train)
            result.train.push_back(r);
        else if (i < n_train + n_val)
            result.val.push_back(r);
        else
            result.test.push_back(r);
    }
    return result;
}

}  // namespace etp
