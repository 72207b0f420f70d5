#pragma once

// Versioned single-file checkpoints.
//
// Layout (little-endian):
//   "GATHCKPT" | u32 version | u32 kind | str config | i64 iteration |
//   str rng | i64 adam_g_steps | i64 adam_dc_steps | u32 blob_count |
//   blob* | u64 fnv1a(all preceding bytes)
// where str = u64 length + bytes and blob = str name + 4×i32 shape + f32 data.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gath/training.hpp"

namespace gath {

inline constexpr char kCheckpointMagic[8] = {'G', 'A', 'T', 'H', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { full = 0, estimator = 1 };

namespace detail {

inline std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

class Writer {
public:
    template <class V>
    void pod(V v) {
        auto p = reinterpret_cast<const std::uint8_t*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof v);
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void raw(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void blob(const std::string& name, const Tensor<float>& t) {
        str(name);
        const auto& s = t.shape();
        for (int d : {s.n, s.c, s.h, s.w}) pod<std::int32_t>(d);
        raw(t.data(), t.size() * sizeof(float));
        ++blob_count_;
    }
    std::vector<std::uint8_t>& bytes() { return buf_; }
    std::uint32_t blob_count() const { return blob_count_; }

private:
    std::vector<std::uint8_t> buf_;
    std::uint32_t blob_count_ = 0;
};

class Reader {
public:
    Reader(const std::uint8_t* p, std::size_t n, std::string where) : p_(p), n_(n), where_(std::move(where)) {}
    template <class V>
    V pod() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, p_ + pos_, sizeof v);
        pos_ += sizeof v;
        return v;
    }
    std::string str() {
        auto n = pod<std::uint64_t>();
        need(n);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
        pos_ += n;
        return s;
    }
    std::pair<std::string, Tensor<float>> blob() {
        std::string name = str();
        std::int32_t d[4];
        for (auto& v : d) v = pod<std::int32_t>();
        for (auto v : d)
            if (v < 0) throw IntegrityError(where_ + ": negative dimension in blob '" + name + "'");
        Tensor<float> t(Shape{d[0], d[1], d[2], d[3]});
        need(t.size() * sizeof(float));
        std::memcpy(t.data(), p_ + pos_, t.size() * sizeof(float));
        pos_ += t.size() * sizeof(float);
        return {name, std::move(t)};
    }

private:
    void need(std::size_t k) const {
        if (k > n_ - pos_) throw IntegrityError(where_ + ": unexpected end of data");
    }
    const std::uint8_t* p_;
    std::size_t n_, pos_ = 0;
    std::string where_;
};

template <class Net>
void write_net(Writer& w, const std::string& prefix, const Net& net) {
    auto& n = const_cast<Net&>(net);
    n.for_each_param([&](const std::string& name, nn::Param<float>& p) { w.blob(prefix + name, p.value); });
    n.for_each_buffer([&](const std::string& name, Tensor<float>& b) { w.blob(prefix + name, b); });
}

template <class Net>
void write_moments(Writer& w, const std::string& prefix, const Net& net, const nn::Adam<float>& opt) {
    auto& n = const_cast<Net&>(net);
    std::size_t k = 0;
    n.for_each_param([&](const std::string& name, nn::Param<float>&) {
        if (k < opt.first_moments().size()) {
            w.blob(prefix + "m." + name, opt.first_moments()[k]);
            w.blob(prefix + "v." + name, opt.second_moments()[k]);
        }
        ++k;
    });
}

using BlobMap = std::map<std::string, Tensor<float>>;

inline void take(BlobMap& blobs, const std::string& name, Tensor<float>& dst, const std::string& where) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw IntegrityError(where + ": missing tensor '" + name + "'");
    if (it->second.shape() != dst.shape())
        throw IntegrityError(where + ": tensor '" + name + "' has shape " + it->second.shape().str() + ", expected " +
                             dst.shape().str());
    dst = std::move(it->second);
    blobs.erase(it);
}

template <class Net>
void read_net(BlobMap& blobs, const std::string& prefix, Net& net, const std::string& where) {
    net.for_each_param([&](const std::string& name, nn::Param<float>& p) {
        take(blobs, prefix + name, p.value, where);
        p.zero_grad();
    });
    net.for_each_buffer([&](const std::string& name, Tensor<float>& b) { take(blobs, prefix + name, b, where); });
}

template <class Net>
void read_moments(BlobMap& blobs, const std::string& prefix, Net& net, nn::Adam<float>& opt, const std::string& where) {
    auto params = params_of<float>(net);
    opt.bind(params);
    std::size_t k = 0;
    net.for_each_param([&](const std::string& name, nn::Param<float>&) {
        take(blobs, prefix + "m." + name, opt.first_moments()[k], where);
        take(blobs, prefix + "v." + name, opt.second_moments()[k], where);
        ++k;
    });
}

/// Writes `bytes` to a sibling temp file, then renames over `path`.
inline void write_atomically(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("write to '" + tmp.string() + "' failed");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

struct Parsed {
    CheckpointKind kind;
    TrainConfig config;
    std::int64_t iteration, g_steps, dc_steps;
    std::string rng;
    BlobMap blobs;
};

inline Parsed parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& where) {
    const std::size_t header = sizeof kCheckpointMagic + 2 * sizeof(std::uint32_t);
    if (bytes.size() < header + sizeof(std::uint64_t)) throw IntegrityError(where + ": file too short");
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw IntegrityError(where + ": not a checkpoint (bad magic)");
    Reader head(bytes.data() + sizeof kCheckpointMagic, header - sizeof kCheckpointMagic, where);
    auto version = head.pod<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw VersionError(where + ": checkpoint format version " + std::to_string(version) + ", this build reads " +
                           std::to_string(kCheckpointVersion));
    const std::size_t body = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, sizeof stored);
    if (fnv1a(bytes.data(), body) != stored) throw IntegrityError(where + ": checksum mismatch (truncated or corrupt)");

    Reader r(bytes.data() + sizeof kCheckpointMagic, body - sizeof kCheckpointMagic, where);
    r.pod<std::uint32_t>();
    Parsed p;
    auto kind = r.pod<std::uint32_t>();
    if (kind > 1) throw IntegrityError(where + ": unknown checkpoint kind " + std::to_string(kind));
    p.kind = CheckpointKind(kind);
    p.config = config_from_text(r.str());
    p.iteration = r.pod<std::int64_t>();
    p.rng = r.str();
    p.g_steps = r.pod<std::int64_t>();
    p.dc_steps = r.pod<std::int64_t>();
    auto count = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, t] = r.blob();
        p.blobs.emplace(std::move(name), std::move(t));
    }
    return p;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<std::uint8_t> finish(Writer& w) {
    auto& b = w.bytes();
    std::uint64_t h = fnv1a(b.data(), b.size());
    w.pod(h);
    return std::move(b);
}

inline void write_header(Writer& w, CheckpointKind kind, const TrainConfig& cfg, std::int64_t iteration,
                         const std::string& rng, std::int64_t g_steps, std::int64_t dc_steps) {
    w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.pod<std::uint32_t>(std::uint32_t(kind));
    w.str(config_to_text(cfg));
    w.pod<std::int64_t>(iteration);
    w.str(rng);
    w.pod<std::int64_t>(g_steps);
    w.pod<std::int64_t>(dc_steps);
}

}  // namespace detail

/// Serializes a checkpoint to bytes.
inline std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& c) {
    std::ostringstream rng;
    rng << c.rng;
    detail::Writer body;
    detail::write_net(body, "g.", c.generator);
    detail::write_net(body, "dc.", c.dc);
    detail::write_net(body, "aue.", c.aue);
    detail::write_moments(body, "adam_g.", c.generator, c.opt_g);
    detail::write_moments(body, "adam_dc.", c.dc, c.opt_dc);
    detail::Writer w;
    detail::write_header(w, CheckpointKind::full, c.config, c.iteration, rng.str(), c.opt_g.steps(), c.opt_dc.steps());
    w.pod<std::uint32_t>(body.blob_count());
    w.raw(body.bytes().data(), body.bytes().size());
    return detail::finish(w);
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    detail::write_atomically(path, checkpoint_bytes(c));
}

inline Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes, const std::string& where,
                                        std::optional<int> expected_classes = std::nullopt) {
    auto p = detail::parse_checkpoint(bytes, where);
    if (p.kind != CheckpointKind::full) throw IntegrityError(where + ": file holds only an estimator");
    if (expected_classes && *expected_classes != p.config.classes)
        throw ConfigError(where + ": checkpoint has classes=" + std::to_string(p.config.classes) + ", expected " +
                          std::to_string(*expected_classes));
    Checkpoint c;
    c.config = p.config;
    c.generator = Generator<float>(c.config.generator_config());
    c.dc = DiscriminatorClassifier<float>(c.config.dc_config());
    c.aue = AUEstimator<float>(c.config.aue_config(), c.config.image_side);
    detail::read_net(p.blobs, "g.", c.generator, where);
    detail::read_net(p.blobs, "dc.", c.dc, where);
    detail::read_net(p.blobs, "aue.", c.aue, where);
    c.opt_g = nn::Adam<float>(adam_settings(c.config, c.config.learning_rate));
    c.opt_dc = nn::Adam<float>(adam_settings(c.config, c.config.learning_rate));
    detail::read_moments(p.blobs, "adam_g.", c.generator, c.opt_g, where);
    detail::read_moments(p.blobs, "adam_dc.", c.dc, c.opt_dc, where);
    c.opt_g.set_steps(p.g_steps);
    c.opt_dc.set_steps(p.dc_steps);
    if (!p.blobs.empty()) throw IntegrityError(where + ": unexpected tensor '" + p.blobs.begin()->first + "'");
    c.iteration = p.iteration;
    std::istringstream rng(p.rng);
    rng >> c.rng;
    if (!rng) throw IntegrityError(where + ": malformed rng state");
    return c;
}

/// Loads a checkpoint. With `expected_classes`, a classifier width mismatch
/// is a ConfigError.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<int> expected_classes = std::nullopt) {
    return checkpoint_from_bytes(detail::read_file(path), path.string(), expected_classes);
}

/// Estimator-only file written by `train-aue`.
inline void save_estimator(const AUEstimator<float>& aue, const TrainConfig& cfg, const std::filesystem::path& path) {
    detail::Writer body;
    detail::write_net(body, "aue.", aue);
    detail::Writer w;
    detail::write_header(w, CheckpointKind::estimator, cfg, 0, "", 0, 0);
    w.pod<std::uint32_t>(body.blob_count());
    w.raw(body.bytes().data(), body.bytes().size());
    detail::write_atomically(path, detail::finish(w));
}

struct LoadedEstimator {
    TrainConfig config;
    AUEstimator<float> aue;
};

/// Reads the estimator from either an estimator-only file or a full checkpoint.
inline LoadedEstimator load_estimator(const std::filesystem::path& path) {
    auto p = detail::parse_checkpoint(detail::read_file(path), path.string());
    LoadedEstimator out{p.config, AUEstimator<float>(p.config.aue_config(), p.config.image_side)};
    detail::read_net(p.blobs, "aue.", out.aue, path.string());
    return out;
}

}  // namespace gath
