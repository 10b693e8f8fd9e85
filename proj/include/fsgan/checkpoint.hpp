#pragma once

// Model checkpoints, little-endian like FSGD but with magic "FSGM":
//
//   "FSGM" | u8 version=1 | u8 scheme | u32 bank count
//   | net trunk | net disc_head | net cls_head
//   | bank count * ( u32 M | u32 noise_dim | M * f64 mixing | M * net )
//
//   net := u32 L | (L+1) * u32 dims | u8 hidden act | u8 output act | f64 slope
//          | per layer: weights (row-major f64) then biases (f64)

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "fsgan/data.hpp"
#include "fsgan/error.hpp"
#include "fsgan/federation.hpp"
#include "fsgan/gan.hpp"

namespace fsgan {

inline constexpr std::array<char, 4> kModelMagic{'F', 'S', 'G', 'M'};
inline constexpr std::uint8_t kModelVersion = 1;

namespace detail {

inline void put_f64(std::vector<std::uint8_t>& out, double v) { put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v)); }

inline void encode_net(std::vector<std::uint8_t>& out, const DenseNet& net) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layer_count()));
    for (int d : net.layer_dims) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.push_back(static_cast<std::uint8_t>(net.hidden_activation));
    out.push_back(static_cast<std::uint8_t>(net.output_activation));
    put_f64(out, net.leaky_slope);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& w = net.params.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) put_f64(out, w(r, c));
        for (Eigen::Index i = 0; i < net.params.biases[l].size(); ++i) put_f64(out, net.params.biases[l][i]);
    }
}

inline Activation decode_activation(ByteReader& r) {
    const auto at = r.pos();
    const auto v = r.get_le<std::uint8_t>("activation");
    if (v > static_cast<std::uint8_t>(Activation::softmax)) throw ParseError("unknown activation code", at);
    return static_cast<Activation>(v);
}

inline DenseNet decode_net(ByteReader& r) {
    const auto at = r.pos();
    const auto layers = r.get_le<std::uint32_t>("layer count");
    if (layers == 0 || layers > 64) throw ParseError("implausible layer count", at);
    std::vector<int> dims;
    for (std::uint32_t i = 0; i <= layers; ++i) {
        const auto d = r.get_le<std::uint32_t>("layer dims");
        if (d == 0 || d > (1u << 20)) throw ParseError("implausible layer width", r.pos() - 4);
        dims.push_back(static_cast<int>(d));
    }
    const auto hidden = decode_activation(r);
    const auto output = decode_activation(r);
    const double slope = std::bit_cast<double>(r.get_le<std::uint64_t>("slope"));
    DenseNet net = make_zero_net(dims, hidden, output, slope);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        auto& w = net.params.weights[l];
        for (Eigen::Index row = 0; row < w.rows(); ++row)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(row, c) = std::bit_cast<double>(r.get_le<std::uint64_t>("weights"));
        for (Eigen::Index i = 0; i < net.params.biases[l].size(); ++i)
            net.params.biases[l][i] = std::bit_cast<double>(r.get_le<std::uint64_t>("biases"));
    }
    return net;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_model(const FederatedModel& model) {
    std::vector<std::uint8_t> out(kModelMagic.begin(), kModelMagic.end());
    out.push_back(kModelVersion);
    out.push_back(static_cast<std::uint8_t>(model.scheme));
    const auto banks = model.sampling_banks();
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(banks.size()));
    detail::encode_net(out, model.head.trunk);
    detail::encode_net(out, model.head.disc_head);
    detail::encode_net(out, model.head.cls_head);
    for (const auto* bank : banks) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bank->size()));
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bank->noise_dim));
        for (double p : bank->mixing) detail::put_f64(out, p);
        for (const auto& g : bank->generators) detail::encode_net(out, g);
    }
    return out;
}

inline FederatedModel decode_model(std::span<const std::uint8_t> data) {
    detail::ByteReader r(data);
    const auto magic = r.take(4, "magic");
    if (!std::equal(kModelMagic.begin(), kModelMagic.end(), magic.begin(),
                    [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }))
        throw ParseError("bad model magic", 0);
    const auto version = r.get_le<std::uint8_t>("version");
    if (version != kModelVersion) throw ParseError("unsupported model version " + std::to_string(version), 4);
    const auto scheme_at = r.pos();
    const auto scheme = r.get_le<std::uint8_t>("scheme");
    if (scheme != 1 && scheme != 2) throw ParseError("unknown scheme code", scheme_at);

    FederatedModel m;
    m.scheme = static_cast<Scheme>(scheme);
    const auto bank_count = r.get_le<std::uint32_t>("bank count");
    if (bank_count == 0) throw ParseError("model has no generator bank", r.pos() - 4);
    m.head.trunk = detail::decode_net(r);
    m.head.disc_head = detail::decode_net(r);
    m.head.cls_head = detail::decode_net(r);
    std::vector<GeneratorBank> banks;
    for (std::uint32_t b = 0; b < bank_count; ++b) {
        GeneratorBank bank;
        const auto count = r.get_le<std::uint32_t>("generator count");
        if (count == 0 || count > 4096) throw ParseError("implausible generator count", r.pos() - 4);
        bank.noise_dim = static_cast<int>(r.get_le<std::uint32_t>("noise dim"));
        for (std::uint32_t k = 0; k < count; ++k) bank.mixing.push_back(std::bit_cast<double>(r.get_le<std::uint64_t>("mixing")));
        for (std::uint32_t k = 0; k < count; ++k) bank.generators.push_back(detail::decode_net(r));
        try {
            bank.validate();
        } catch (const std::exception& e) {
            throw ParseError(std::string("invalid generator bank: ") + e.what(), r.pos());
        }
        banks.push_back(std::move(bank));
    }
    if (r.remaining() != 0) throw ParseError("trailing bytes after model", r.pos());
    if (m.head.trunk.output_dim() != m.head.disc_head.input_dim() ||
        m.head.trunk.output_dim() != m.head.cls_head.input_dim() ||
        banks.front().record_dim() != m.head.record_dim())
        throw ParseError("model components have inconsistent shapes", r.pos());
    m.bank = banks.front();
    if (m.scheme == Scheme::c2) m.site_banks = std::move(banks);
    return m;
}

inline void save_model(const std::filesystem::path& path, const FederatedModel& model) {
    detail::write_file(path, encode_model(model));
}

inline FederatedModel load_model(const std::filesystem::path& path) { return decode_model(detail::read_file(path)); }

}  // namespace fsgan
