#pragma once

// Inference service: POST /synthesize, GET /model, GET /health over an
// immutable model snapshot that can be swapped atomically.

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "gath/checkpoint.hpp"
#include "gath/data.hpp"
#include "gath/image.hpp"
#include "gath/postprocess.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen.
#include <httplib.h>

namespace gath {

inline std::vector<std::uint8_t> base64_decode(const std::string& in) {
    static const auto table = [] {
        std::array<int, 256> t{};
        t.fill(-1);
        const char* a = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        for (int i = 0; i < 64; ++i) t[std::uint8_t(a[i])] = i;
        t['-'] = 62;  // url-safe alphabet
        t['_'] = 63;
        return t;
    }();
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    for (char ch : in) {
        if (ch == '=' || ch == '\n' || ch == '\r' || ch == ' ') continue;
        int v = table[std::uint8_t(ch)];
        if (v < 0) throw DecodeError("invalid base64 character");
        acc = (acc << 6) | std::uint32_t(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(std::uint8_t((acc >> bits) & 0xFF));
        }
    }
    return out;
}

inline std::string base64_encode(const std::vector<std::uint8_t>& in) {
    const char* a = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
        for (int s = 18; s >= 0; s -= 6) out += a[(v >> s) & 63];
    }
    if (i + 1 == in.size()) {
        std::uint32_t v = in[i] << 16;
        out += a[(v >> 18) & 63];
        out += a[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == in.size()) {
        std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
        out += a[(v >> 18) & 63];
        out += a[(v >> 12) & 63];
        out += a[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

/// Generator forward pass on one portrait with one AU vector, followed by
/// the requested post-processing stages.
inline RasterImage synthesize(const Generator<float>& g, const ImageTensor& portrait, const AUVector& au,
                              const PostprocessConfig& pp) {
    Tensor<float> e(1, au.size(), 1, 1);
    std::copy(au.coeffs().begin(), au.coeffs().end(), e.data());
    auto y = g.forward(portrait.tensor(), e, Mode::inference);
    return apply_stages(denormalize(y), pp);
}

struct ServiceResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// Request handling independent of the transport. Handlers read a snapshot
/// taken under the lock and never mutate it.
class SynthesisService {
public:
    SynthesisService() = default;
    explicit SynthesisService(std::shared_ptr<const Checkpoint> model, PostprocessConfig pp = {})
        : model_(std::move(model)), pp_(pp) {}

    /// In-flight requests finish on the snapshot they started with.
    void swap_model(std::shared_ptr<const Checkpoint> m) {
        std::lock_guard lock(mu_);
        model_ = std::move(m);
    }

    std::shared_ptr<const Checkpoint> snapshot() const {
        std::lock_guard lock(mu_);
        return model_;
    }

    ServiceResponse health() const {
        nlohmann::json j{{"status", "ok"}, {"model_loaded", snapshot() != nullptr}};
        return {200, "application/json", j.dump()};
    }

    ServiceResponse model_info() const {
        auto m = snapshot();
        if (!m) return error(503, "model_not_loaded", "no checkpoint is loaded");
        auto& g = const_cast<Generator<float>&>(m->generator);
        std::size_t params = 0;
        g.for_each_param([&](const std::string&, nn::Param<float>& p) { params += p.value.size(); });
        nlohmann::json j{{"iteration", m->iteration},
                         {"image_side", m->config.image_side},
                         {"au_dim", m->config.au_dim},
                         {"classes", m->config.classes},
                         {"generator_parameters", params},
                         {"generator_checksum", std::to_string(param_checksum<float>(g))},
                         {"checkpoint_version", kCheckpointVersion},
                         {"config", config_to_text(m->config)}};
        return {200, "application/json", j.dump()};
    }

    /// Body: {"portrait": base64 PNG, "au": [reals], "postprocess": [stage names]}.
    /// Responds with PNG bytes.
    ServiceResponse synthesize_request(const std::string& body) const {
        auto m = snapshot();
        if (!m) return error(503, "model_not_loaded", "no checkpoint is loaded");
        nlohmann::json req;
        try {
            req = nlohmann::json::parse(body);
        } catch (const std::exception& e) {
            return error(400, "parse", std::string("request is not valid JSON: ") + e.what());
        }
        if (!req.is_object()) return error(400, "schema", "request must be a JSON object");
        if (!req.contains("portrait") || !req["portrait"].is_string())
            return error(400, "schema", "field 'portrait' (base64 PNG string) is required");
        if (!req.contains("au") || !req["au"].is_array())
            return error(400, "schema", "field 'au' (array of numbers) is required");
        try {
            std::vector<float> values;
            for (const auto& v : req["au"]) {
                if (!v.is_number()) throw SchemaError("field 'au' must contain only numbers");
                values.push_back(v.get<float>());
            }
            auto au = AUVector::from_values(values, m->config.au_dim);
            PostprocessConfig pp = pp_;
            pp.stages = {};
            if (req.contains("postprocess")) {
                const auto& s = req["postprocess"];
                if (s.is_string()) {
                    pp.stages = parse_stages(s.get<std::string>());
                } else if (s.is_array()) {
                    std::string joined;
                    for (const auto& t : s) {
                        if (!t.is_string()) throw SchemaError("field 'postprocess' must contain stage names");
                        joined += t.get<std::string>() + ",";
                    }
                    pp.stages = parse_stages(joined);
                } else {
                    throw SchemaError("field 'postprocess' must be a string or an array");
                }
            }
            auto raster = decode_png_rgb(base64_decode(req["portrait"].get<std::string>()));
            auto portrait = to_image_tensor(raster, m->config.image_side);
            auto out = synthesize(m->generator, portrait, au, pp);
            auto png = encode_png(out);
            return {200, "image/png", std::string(png.begin(), png.end())};
        } catch (const Error& e) {
            return error(e.kind() == "io" ? 500 : 422, e.kind(), e.what());
        }
    }

    static ServiceResponse error(int status, const std::string& kind, const std::string& detail) {
        nlohmann::json j{{"error", kind}, {"detail", detail}};
        return {status, "application/json", j.dump()};
    }

private:
    mutable std::mutex mu_;
    std::shared_ptr<const Checkpoint> model_;
    PostprocessConfig pp_;
};

/// Binds the service's routes onto an httplib server.
inline void install_routes(httplib::Server& server, const SynthesisService& svc) {
    auto send = [](httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    server.Post("/synthesize", [&svc, send](const httplib::Request& req, httplib::Response& res) {
        send(res, svc.synthesize_request(req.body));
    });
    server.Get("/model", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.model_info()); });
    server.Get("/health", [&svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc.health()); });
}

}  // namespace gath
