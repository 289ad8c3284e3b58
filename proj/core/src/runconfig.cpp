#include "etp/runconfig.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace etp {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' needs an integer, got '" + value + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' needs a non-negative integer, got '" + value +
                          "'");
    }
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' needs a number, got '" + value + "'");
    }
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: '" + key + "' needs true/false, got '" + value + "'");
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "objective") {
        train.objective = value;
    } else if (key == "epochs") {
        train.epochs = to_int(key, value);
    } else if (key == "batch_size") {
        train.batch_size = to_int(key, value);
    } else if (key == "lr") {
        train.lr = to_double(key, value);
    } else if (key == "weight_decay") {
        train.weight_decay = to_double(key, value);
    } else if (key == "seed") {
        train.seed = to_u64(key, value);
    } else if (key == "tau_cross") {
        train.contrastive.tau_cross = to_double(key, value);
    } else if (key == "tau_ssl") {
        train.contrastive.tau_ssl = to_double(key, value);
    } else if (key == "checkpoint_every") {
        train.checkpoint_every = to_int(key, value);
    } else if (key == "max_text_tokens") {
        train.max_text_tokens = to_int(key, value);
    } else if (key == "jitter_sigma") {
        train.augmentation.jitter_sigma = to_double(key, value);
    } else if (key == "scale_lo") {
        train.augmentation.scale_lo = to_double(key, value);
    } else if (key == "scale_hi") {
        train.augmentation.scale_hi = to_double(key, value);
    } else if (key == "num_segments") {
        train.augmentation.num_segments = to_int(key, value);
    } else if (key == "invert_prob") {
        train.augmentation.invert_prob = to_double(key, value);
    } else if (key == "model_preset") {
        if (value == "tiny") {
            model.ecg = EcgEncoderConfig::tiny();
            model.proj_dim = 32;
            model.text.embed_dim = 64;
        } else if (value == "full") {
            model.ecg = EcgEncoderConfig::full();
            model.proj_dim = 512;
            model.text.embed_dim = 256;
        } else {
            throw ConfigError("config: model_preset must be tiny or full, got '" + value + "'");
        }
        model_preset = value;
    } else if (key == "in_leads") {
        model.ecg.in_leads = to_int(key, value);
    } else if (key == "proj_dim") {
        model.proj_dim = to_int(key, value);
    } else if (key == "proj_nonlinear") {
        model.proj_nonlinear = to_bool(key, value);
    } else if (key == "text_embed_dim") {
        model.text.embed_dim = to_int(key, value);
    } else if (key == "text_frozen") {
        model.text.frozen = to_bool(key, value);
    } else {
        throw ConfigError("config: unknown key '" + key + "'");
    }
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    RunConfig cfg = defaults();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key or value");
        cfg.set(key, value);
    }
    return cfg;
}

ModelConfig RunConfig::resolved_model(int vocab_size) const {
    ModelConfig out = model;
    out.text.vocab_size = vocab_size;
    out.init_seed = train.seed;
    out.validate();
    return out;
}

std::string RunConfig::to_json() const {
    json j{{"model_preset", model_preset},
           {"model",
            {{"in_leads", model.ecg.in_leads},
             {"stage_channels", model.ecg.stage_channels},
             {"blocks_per_stage", model.ecg.blocks_per_stage},
             {"stem_kernel", model.ecg.stem_kernel},
             {"block_kernel", model.ecg.block_kernel},
             {"vocab_size", model.text.vocab_size},
             {"text_embed_dim", model.text.embed_dim},
             {"text_frozen", model.text.frozen},
             {"proj_dim", model.proj_dim},
             {"proj_nonlinear", model.proj_nonlinear},
             {"init_seed", model.init_seed}}},
           {"train",
            {{"objective", train.objective},
             {"epochs", train.epochs},
             {"batch_size", train.batch_size},
             {"lr", train.lr},
             {"weight_decay", train.weight_decay},
             {"seed", train.seed},
             {"tau_cross", train.contrastive.tau_cross},
             {"tau_ssl", train.contrastive.tau_ssl},
             {"checkpoint_every", train.checkpoint_every},
             {"max_text_tokens", train.max_text_tokens},
             {"jitter_sigma", train.augmentation.jitter_sigma},
             {"scale_lo", train.augmentation.scale_lo},
             {"scale_hi", train.augmentation.scale_hi},
             {"num_segments", train.augmentation.num_segments},
             {"invert_prob", train.augmentation.invert_prob}}}};
    return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& config_json) {
    json j;
    try {
        j = json::parse(config_json);
    } catch (const json::exception& e) {
        throw ParseError(std::string("config echo is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("model"))
        throw SchemaError("config echo has no 'model' object");
    const json& m = j.at("model");
    try {
        ModelConfig cfg;
        cfg.ecg.in_leads = m.at("in_leads").get<int>();
        const auto channels = m.at("stage_channels").get<std::vector<int>>();
        if (channels.size() != 4) throw SchemaError("stage_channels must have 4 entries");
        std::copy(channels.begin(), channels.end(), cfg.ecg.stage_channels.begin());
        cfg.ecg.blocks_per_stage = m.at("blocks_per_stage").get<int>();
        cfg.ecg.stem_kernel = m.at("stem_kernel").get<int>();
        cfg.ecg.block_kernel = m.at("block_kernel").get<int>();
        cfg.text.vocab_size = m.at("vocab_size").get<int>();
        cfg.text.embed_dim = m.at("text_embed_dim").get<int>();
        cfg.text.frozen = m.at("text_frozen").get<bool>();
        cfg.proj_dim = m.at("proj_dim").get<int>();
        cfg.proj_nonlinear = m.at("proj_nonlinear").get<bool>();
        cfg.init_seed = m.at("init_seed").get<std::uint64_t>();
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("config echo model object is malformed: ") + e.what());
    }
}

}  // namespace etp
