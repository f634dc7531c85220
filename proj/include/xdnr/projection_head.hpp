#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "xdnr/error.hpp"

namespace xdnr {

/// Affine map h(x) = W x (+ b) applied to both query and document embeddings.
/// W is dim_out x dim_in, row-major.
struct ProjectionHead {
    std::size_t dim_in = 0;
    std::size_t dim_out = 0;
    std::vector<double> weights;
    std::optional<std::vector<double>> bias;

    static ProjectionHead identity(std::size_t dim) {
        ProjectionHead h{dim, dim, std::vector<double>(dim * dim, 0.0), std::nullopt};
        for (std::size_t i = 0; i < dim; ++i) h.weights[i * dim + i] = 1.0;
        return h;
    }

    std::size_t parameter_count() const { return weights.size() + (bias ? bias->size() : 0); }

    double weight(std::size_t row, std::size_t col) const { return weights[row * dim_in + col]; }

    void forward(std::span<const double> x, std::span<double> y) const {
        if (x.size() != dim_in || y.size() != dim_out) throw UsageError("projection dimension mismatch");
        for (std::size_t r = 0; r < dim_out; ++r) {
            const double* w = weights.data() + r * dim_in;
            double acc = bias ? (*bias)[r] : 0.0;
            for (std::size_t c = 0; c < dim_in; ++c) acc += w[c] * x[c];
            y[r] = acc;
        }
    }

    std::vector<double> forward(std::span<const double> x) const {
        std::vector<double> y(dim_out);
        forward(x, y);
        return y;
    }

    bool finite() const {
        for (double w : weights)
            if (!std::isfinite(w)) return false;
        if (bias)
            for (double b : *bias)
                if (!std::isfinite(b)) return false;
        return true;
    }

    void check() const {
        if (dim_in == 0 || dim_out == 0) throw DataError("projection head has a zero dimension");
        if (weights.size() != dim_in * dim_out) throw DataError("projection weights do not match dimensions");
        if (bias && bias->size() != dim_out) throw DataError("projection bias does not match dim_out");
        if (!finite()) throw DataError("projection head has non-finite parameters");
    }

    /// Stored form: little-endian f32 weights (row-major) followed by f32 bias.
    std::vector<float> to_f32() const {
        std::vector<float> out;
        out.reserve(parameter_count());
        for (double w : weights) out.push_back(static_cast<float>(w));
        if (bias)
            for (double b : *bias) out.push_back(static_cast<float>(b));
        return out;
    }

    /// SHA-256 (hex) of the stored f32 payload.
    std::string checksum() const {
        const auto payload = to_f32();
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        if (EVP_Digest(payload.data(), payload.size() * sizeof(float), digest, &len, EVP_sha256(), nullptr) != 1)
            throw std::runtime_error("SHA-256 failed");
        static constexpr char hex[] = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(hex[digest[i] >> 4]);
            out.push_back(hex[digest[i] & 0xF]);
        }
        return out;
    }

    friend bool operator==(const ProjectionHead&, const ProjectionHead&) = default;
};

}  // namespace xdnr
