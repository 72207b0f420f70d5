#pragma once

// Training configuration and its flat `key=value` text form. Every field is
// addressable by its snake_case name; CLI flags use the kebab-case spelling.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gath/data.hpp"
#include "gath/losses.hpp"
#include "gath/networks.hpp"

namespace gath {

struct TrainConfig {
    std::int64_t iterations = 1000;
    int batch_size = 64;
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    LossWeights weights;
    std::uint64_t seed = 1;
    int image_side = 100;
    int classes = 2228;
    AdvGForm adv_g_form = AdvGForm::neg_square;
    std::int64_t checkpoint_every = 0;  // 0 disables periodic checkpoints
    int dc_steps_per_g = 1;
    bool lr_linear_decay = false;
    bool verify_alternation = false;  // checksum-based freezing assertions every step

    // Architecture.
    int au_dim = kDefaultAuDim;
    std::array<int, 4> g_enc_widths{64, 128, 256, 256};
    int g_res_width = 256;
    int g_res_blocks = 6;
    std::array<int, 2> g_up_widths{128, 64};
    std::vector<int> dc_widths{64, 128, 256, 512};
    std::array<int, 3> aue_widths{64, 128, 256};
    int aue_hidden = 1024;
    double init_std = 0.02;

    // Estimator pretraining.
    std::int64_t aue_iterations = 2000;
    int aue_batch_size = 64;
    double aue_learning_rate = 1e-4;
    int aue_jitter = 0;  // max random shift in pixels during estimator training
    double aue_hue_jitter = 0;   // max hue rotation during estimator training, fraction of a full turn
    double aue_tone_jitter = 0;  // max brightness gain/offset deviation during estimator training

    GeneratorConfig generator_config() const {
        GeneratorConfig g;
        g.au_dim = au_dim;
        g.enc_widths = g_enc_widths;
        g.res_width = g_res_width;
        g.res_blocks = g_res_blocks;
        g.up_widths = g_up_widths;
        return g;
    }
    DCConfig dc_config() const { return {dc_widths, classes, 0.1}; }
    AUEConfig aue_config() const { return {aue_widths, aue_hidden, au_dim}; }

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (aue_batch_size < 1) throw ConfigError("aue_batch_size must be >= 1");
        if (!(learning_rate > 0) || !(aue_learning_rate > 0)) throw ConfigError("learning rates must be > 0");
        if (iterations < 0 || aue_iterations < 0) throw ConfigError("iteration counts must be >= 0");
        if (classes < 1) throw ConfigError("classes must be >= 1");
        if (au_dim < 1) throw ConfigError("au_dim must be >= 1");
        if (dc_steps_per_g < 1) throw ConfigError("dc_steps_per_g must be >= 1");
        if (image_side % 4 != 0 || image_side < 8) throw ConfigError("image_side must be a multiple of 4, >= 8");
        if (!(aue_hue_jitter >= 0 && aue_hue_jitter <= 0.5)) throw ConfigError("aue_hue_jitter must be in [0, 0.5]");
        if (!(aue_tone_jitter >= 0 && aue_tone_jitter < 1)) throw ConfigError("aue_tone_jitter must be in [0, 1)");
        weights.validate();
    }
};

namespace detail {

template <class I>
I parse_int(const std::string& key, const std::string& v) {
    I out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not an integer");
    return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
    double out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean");
}

inline std::string real_str(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <class C>
std::string join(const C& c) {
    std::string s;
    for (auto v : c) s += (s.empty() ? "" : ",") + std::to_string(v);
    return s;
}

inline std::vector<int> parse_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& tok : split(v, ',')) out.push_back(parse_int<int>(key, tok));
    return out;
}

template <std::size_t N>
std::array<int, N> parse_array(const std::string& key, const std::string& v) {
    auto l = parse_list(key, v);
    if (l.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated values");
    std::array<int, N> a{};
    std::copy(l.begin(), l.end(), a.begin());
    return a;
}

struct ConfigField {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

inline const std::map<std::string, ConfigField>& config_fields() {
    using C = TrainConfig;
    static const std::map<std::string, ConfigField> fields = [] {
        std::map<std::string, ConfigField> f;
        auto i64 = [&](const char* k, std::int64_t C::*m) {
            f[k] = {[=](C& c, const std::string& v) { c.*m = parse_int<std::int64_t>(k, v); },
                    [=](const C& c) { return std::to_string(c.*m); }};
        };
        auto i32 = [&](const char* k, int C::*m) {
            f[k] = {[=](C& c, const std::string& v) { c.*m = parse_int<int>(k, v); },
                    [=](const C& c) { return std::to_string(c.*m); }};
        };
        auto real = [&](const char* k, double C::*m) {
            f[k] = {[=](C& c, const std::string& v) { c.*m = parse_real(k, v); },
                    [=](const C& c) { return real_str(c.*m); }};
        };
        auto boolean = [&](const char* k, bool C::*m) {
            f[k] = {[=](C& c, const std::string& v) { c.*m = parse_bool(k, v); },
                    [=](const C& c) { return std::string(c.*m ? "true" : "false"); }};
        };
        auto weight = [&](const char* k, double LossWeights::*m) {
            f[k] = {[=](C& c, const std::string& v) { c.weights.*m = parse_real(k, v); },
                    [=](const C& c) { return real_str(c.weights.*m); }};
        };
        i64("iterations", &C::iterations);
        i32("batch_size", &C::batch_size);
        real("learning_rate", &C::learning_rate);
        real("adam_beta1", &C::adam_beta1);
        real("adam_beta2", &C::adam_beta2);
        weight("lambda_rec", &LossWeights::lambda_rec);
        weight("lambda_adv", &LossWeights::lambda_adv);
        weight("lambda_cls", &LossWeights::lambda_cls);
        weight("lambda_tv", &LossWeights::lambda_tv);
        f["seed"] = {[](C& c, const std::string& v) { c.seed = parse_int<std::uint64_t>("seed", v); },
                     [](const C& c) { return std::to_string(c.seed); }};
        i32("image_side", &C::image_side);
        i32("classes", &C::classes);
        f["adv_g_form"] = {[](C& c, const std::string& v) { c.adv_g_form = adv_g_form_from_string(v); },
                           [](const C& c) { return to_string(c.adv_g_form); }};
        i64("checkpoint_every", &C::checkpoint_every);
        i32("dc_steps_per_g", &C::dc_steps_per_g);
        boolean("lr_linear_decay", &C::lr_linear_decay);
        boolean("verify_alternation", &C::verify_alternation);
        i32("au_dim", &C::au_dim);
        f["g_enc_widths"] = {[](C& c, const std::string& v) { c.g_enc_widths = parse_array<4>("g_enc_widths", v); },
                             [](const C& c) { return join(c.g_enc_widths); }};
        i32("g_res_width", &C::g_res_width);
        i32("g_res_blocks", &C::g_res_blocks);
        f["g_up_widths"] = {[](C& c, const std::string& v) { c.g_up_widths = parse_array<2>("g_up_widths", v); },
                            [](const C& c) { return join(c.g_up_widths); }};
        f["dc_widths"] = {[](C& c, const std::string& v) { c.dc_widths = parse_list("dc_widths", v); },
                          [](const C& c) { return join(c.dc_widths); }};
        f["aue_widths"] = {[](C& c, const std::string& v) { c.aue_widths = parse_array<3>("aue_widths", v); },
                           [](const C& c) { return join(c.aue_widths); }};
        i32("aue_hidden", &C::aue_hidden);
        real("init_std", &C::init_std);
        i64("aue_iterations", &C::aue_iterations);
        i32("aue_batch_size", &C::aue_batch_size);
        real("aue_learning_rate", &C::aue_learning_rate);
        i32("aue_jitter", &C::aue_jitter);
        real("aue_hue_jitter", &C::aue_hue_jitter);
        real("aue_tone_jitter", &C::aue_tone_jitter);
        return f;
    }();
    return fields;
}

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
    std::vector<std::string> k;
    for (const auto& [name, _] : detail::config_fields()) k.push_back(name);
    return k;
}

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& value) {
    auto it = detail::config_fields().find(key);
    if (it == detail::config_fields().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(c, value);
}

inline std::string get_config_value(const TrainConfig& c, const std::string& key) {
    auto it = detail::config_fields().find(key);
    if (it == detail::config_fields().end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second.get(c);
}

/// Applies `key=value` lines; blank lines and `#` comments are ignored.
inline void apply_config_text(TrainConfig& c, const std::string& text, const std::string& name = "config") {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(name + ":" + std::to_string(lineno) + ": expected key=value");
        try {
            set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(name + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(base, ss.str(), path.string());
    return base;
}

inline std::string config_to_text(const TrainConfig& c) {
    std::string s;
    for (const auto& [k, f] : detail::config_fields()) s += k + "=" + f.get(c) + "\n";
    return s;
}

inline TrainConfig config_from_text(const std::string& text) {
    TrainConfig c;
    apply_config_text(c, text, "checkpoint config");
    return c;
}

}  // namespace gath
