#include "evt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "evt/config.hpp"
#include "evt/error.hpp"

namespace evt {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(value & 0xFFu));
        value = static_cast<T>(value >> 8);
    }
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v = static_cast<T>(v | (static_cast<T>(bytes_[pos_ + i]) << (8 * i)));
        pos_ += sizeof(T);
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError("truncated checkpoint");
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out{'E', 'V', 'T', 'C'};
    put_le<std::uint32_t>(out, kCheckpointVersion);
    const std::string header =
        nlohmann::json{{"model", to_json(ckpt.model)}, {"repr", to_json(ckpt.repr)}}.dump();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());

    std::uint32_t count = 0;
    ckpt.params.visit([&](const std::string&, const Matrix&) { ++count; });
    put_le<std::uint32_t>(out, count);
    ckpt.params.visit([&](const std::string& name, const Matrix& m) {
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
        for (double v : m.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    });
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    if (in.str(4) != "EVTC") throw DataError("bad checkpoint magic, expected EVTC");
    const auto version = in.le<std::uint32_t>();
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = in.le<std::uint32_t>();
    Checkpoint ckpt;
    try {
        const auto header = nlohmann::json::parse(in.str(header_len));
        ckpt.model = model_from_json(header.at("model"));
        ckpt.repr = repr_from_json(header.at("repr"));
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError(std::string("bad checkpoint header: ") + e.what());
    }

    // Shape template from the config; values are overwritten below.
    ckpt.params = init_params(ckpt.model, 0);
    std::vector<std::pair<std::string, Matrix*>> slots;
    ckpt.params.visit([&](const std::string& name, Matrix& m) { slots.emplace_back(name, &m); });

    const auto count = in.le<std::uint32_t>();
    if (count != slots.size()) {
        throw DataError("checkpoint has " + std::to_string(count) + " arrays, config expects " +
                        std::to_string(slots.size()));
    }
    for (auto& [expected_name, target] : slots) {
        const auto name_len = in.le<std::uint16_t>();
        const std::string name = in.str(name_len);
        if (name != expected_name) {
            throw DataError("checkpoint array '" + name + "' where '" + expected_name + "' was expected");
        }
        const auto rows = in.le<std::uint32_t>();
        const auto cols = in.le<std::uint32_t>();
        if (rows != target->rows() || cols != target->cols()) {
            throw DataError("checkpoint array '" + name + "' has the wrong shape");
        }
        for (double& v : target->data()) v = std::bit_cast<double>(in.le<std::uint64_t>());
    }
    if (!in.done()) throw DataError("trailing bytes after checkpoint arrays");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace evt
