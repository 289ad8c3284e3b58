#include "etp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <type_traits>

namespace etp {

namespace {

constexpr char kMagic[4] = {'E', 'T', 'P', 'C'};

// All multi-byte fields are little-endian on disk regardless of host order.
template <typename T>
void put(std::string& out, T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.append(s);
}

class Reader {
  public:
    Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    template <typename T>
    T get() {
        static_assert(std::is_integral_v<T>);
        need(sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(T);
        return static_cast<T>(v);
    }

    std::string get_string() {
        const std::uint64_t len = get<std::uint64_t>();
        need(len);
        std::string s = bytes_.substr(pos_, len);
        pos_ += len;
        return s;
    }

    void raw(void* dst, std::size_t len) {
        need(len);
        std::memcpy(dst, bytes_.data() + pos_, len);
        pos_ += len;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

  private:
    void need(std::uint64_t len) {
        if (pos_ + len > bytes_.size() || pos_ + len < pos_)
            throw TruncatedError("checkpoint '" + path_ + "' ends early (needed " +
                                 std::to_string(len) + " bytes at offset " +
                                 std::to_string(pos_) + ")");
    }

    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw LookupError("checkpoint has no tensor named '" + name + "'");
}

void Checkpoint::save(const std::string& path) const {
    std::string out;
    out.append(kMagic, 4);
    put<std::uint32_t>(out, version);
    put<std::uint64_t>(out, completed_epochs);
    put<std::uint64_t>(out, global_step);
    for (std::uint64_t word : rng_state) put<std::uint64_t>(out, word);
    put_string(out, config_json);
    put<std::uint64_t>(out, vocab_tokens.size());
    for (const std::string& tok : vocab_tokens) put_string(out, tok);
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        put_string(out, name);
        out.push_back(0);  // dtype: f32
        const Shape& shape = t.shape();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) put<std::int64_t>(out, d);
        for (double v : t.values()) {
            const float f = static_cast<float>(v);
            std::uint32_t word;
            std::memcpy(&word, &f, 4);
            put<std::uint32_t>(out, word);
        }
    }

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw CheckpointError("cannot open '" + path + "' for writing");
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw CheckpointError("write to '" + path + "' failed");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw CheckpointError("cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    Reader r(bytes, path);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw BadMagicError("'" + path + "' is not a checkpoint (bad magic)");

    Checkpoint ckpt;
    ckpt.version = r.get<std::uint32_t>();
    if (ckpt.version != kVersion)
        throw VersionError("checkpoint '" + path + "' has version " +
                           std::to_string(ckpt.version) + ", expected " +
                           std::to_string(kVersion));
    ckpt.completed_epochs = r.get<std::uint64_t>();
    ckpt.global_step = r.get<std::uint64_t>();
    for (std::uint64_t& word : ckpt.rng_state) word = r.get<std::uint64_t>();
    ckpt.config_json = r.get_string();
    const std::uint64_t vocab_count = r.get<std::uint64_t>();
    ckpt.vocab_tokens.reserve(vocab_count);
    for (std::uint64_t i = 0; i < vocab_count; ++i) ckpt.vocab_tokens.push_back(r.get_string());

    const std::uint64_t tensor_count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < tensor_count; ++i) {
        std::string name = r.get_string();
        const std::uint8_t dtype = r.get<std::uint8_t>();
        if (dtype > 1)
            throw CheckpointError("checkpoint '" + path + "': tensor '" + name +
                                  "' has unknown dtype " + std::to_string(dtype));
        const std::uint32_t rank = r.get<std::uint32_t>();
        Shape shape;
        std::int64_t numel = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            const std::int64_t d = r.get<std::int64_t>();
            if (d <= 0 || d > std::numeric_limits<int>::max())
                throw CheckpointError("checkpoint '" + path + "': tensor '" + name +
                                      "' has invalid dimension " + std::to_string(d));
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        std::vector<double> values(static_cast<std::size_t>(numel));
        if (dtype == 0) {
            for (double& v : values) {
                std::uint32_t word = r.get<std::uint32_t>();
                float f;
                std::memcpy(&f, &word, 4);
                v = static_cast<double>(f);
            }
        } else {
            for (double& v : values) {
                std::uint64_t word = r.get<std::uint64_t>();
                std::memcpy(&v, &word, 8);
            }
        }
        ckpt.tensors.emplace_back(std::move(name),
                                  Tensor::from_data(std::move(shape), std::move(values)));
    }
    if (!r.exhausted())
        throw CheckpointError("checkpoint '" + path + "' has trailing bytes");
    return ckpt;
}

}  // namespace etp
