#pragma once

// Datasets: separable synthetic mixtures, payload ingestion through the FSGD
// binary format, site partitioning and mini-batch sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsgan/error.hpp"
#include "fsgan/tensor_nn.hpp"

namespace fsgan {

// ---------------------------------------------------------------------------
// Mixtures

struct MixtureComponent {
    enum class Kind : std::uint8_t { uniform, gaussian };

    Kind kind = Kind::uniform;
    std::vector<double> lo, hi;  // uniform: per-dimension interval
    std::vector<double> center;  // gaussian: per-dimension mean
    double sigma = 0.0;

    /// Uniform on the box [lo, hi]^dim.
    static MixtureComponent uniform(double lo, double hi, int dim) {
        MixtureComponent c;
        c.kind = Kind::uniform;
        c.lo.assign(static_cast<std::size_t>(dim), lo);
        c.hi.assign(static_cast<std::size_t>(dim), hi);
        return c;
    }

    /// Isotropic Gaussian, samples clamped to [0,1].
    static MixtureComponent gaussian(double center, double sigma, int dim) {
        MixtureComponent c;
        c.kind = Kind::gaussian;
        c.center.assign(static_cast<std::size_t>(dim), center);
        c.sigma = sigma;
        return c;
    }

    int dim() const { return static_cast<int>(kind == Kind::uniform ? lo.size() : center.size()); }

    /// Axis-aligned box containing the support (Gaussians: +-4 sigma).
    std::pair<std::vector<double>, std::vector<double>> support_box() const {
        if (kind == Kind::uniform) return {lo, hi};
        std::vector<double> a(center.size()), b(center.size());
        for (std::size_t i = 0; i < center.size(); ++i) {
            a[i] = center[i] - 4.0 * sigma;
            b[i] = center[i] + 4.0 * sigma;
        }
        return {a, b};
    }

    /// Density at x. Uniform densities are exact; Gaussian densities ignore
    /// the clamping.
    template <class Row>
    double density(const Row& x) const {
        if (kind == Kind::uniform) {
            double vol = 1.0;
            for (std::size_t i = 0; i < lo.size(); ++i) {
                if (x[static_cast<Eigen::Index>(i)] < lo[i] || x[static_cast<Eigen::Index>(i)] > hi[i]) return 0.0;
                vol *= hi[i] - lo[i];
            }
            return 1.0 / vol;
        }
        double d2 = 0.0;
        for (std::size_t i = 0; i < center.size(); ++i) {
            const double t = (x[static_cast<Eigen::Index>(i)] - center[i]) / sigma;
            d2 += t * t;
        }
        const double norm = std::pow(2.0 * 3.14159265358979323846 * sigma * sigma, 0.5 * center.size());
        return std::exp(-0.5 * d2) / norm;
    }

    template <class Row>
    bool in_support(const Row& x) const {
        const auto [a, b] = support_box();
        for (std::size_t i = 0; i < a.size(); ++i)
            if (x[static_cast<Eigen::Index>(i)] < a[i] || x[static_cast<Eigen::Index>(i)] > b[i]) return false;
        return true;
    }
};

struct MixtureSpec {
    std::vector<MixtureComponent> components;
    std::vector<double> proportions;  // empty means uniform
    int record_dim = 1;
    bool check_separation = true;

    std::size_t size() const { return components.size(); }

    std::vector<double> weights() const {
        if (!proportions.empty()) return proportions;
        return std::vector<double>(components.size(), 1.0 / static_cast<double>(components.size()));
    }

    void validate() const {
        if (components.empty()) throw ConfigError("mixture: no components");
        if (record_dim < 1) throw ConfigError("mixture: record_dim must be >= 1");
        for (std::size_t m = 0; m < components.size(); ++m) {
            const auto& c = components[m];
            if (c.dim() != record_dim)
                throw ConfigError("mixture: component " + std::to_string(m) + " has the wrong dimension");
            if (c.kind == MixtureComponent::Kind::uniform) {
                for (std::size_t i = 0; i < c.lo.size(); ++i)
                    if (!(0.0 <= c.lo[i] && c.lo[i] < c.hi[i] && c.hi[i] <= 1.0))
                        throw ConfigError("mixture: component " + std::to_string(m) + " interval outside [0,1]");
            } else if (!(c.sigma > 0.0)) {
                throw ConfigError("mixture: component " + std::to_string(m) + " needs sigma > 0");
            }
        }
        const auto w = weights();
        if (w.size() != components.size()) throw ConfigError("mixture: proportions/components length mismatch");
        double s = 0.0;
        for (double v : w) {
            if (!(v >= 0.0)) throw ConfigError("mixture: negative proportion");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) throw ConfigError("mixture: proportions must sum to 1");
        if (check_separation) check_disjoint();
    }

    /// Uniform boxes must be disjoint; Gaussians need centers >= 8 sigma apart.
    void check_disjoint() const {
        for (std::size_t a = 0; a < components.size(); ++a)
            for (std::size_t b = a + 1; b < components.size(); ++b) {
                const auto& ca = components[a];
                const auto& cb = components[b];
                bool separated = false;
                if (ca.kind == MixtureComponent::Kind::gaussian && cb.kind == MixtureComponent::Kind::gaussian) {
                    double d2 = 0.0;
                    for (std::size_t i = 0; i < ca.center.size(); ++i)
                        d2 += (ca.center[i] - cb.center[i]) * (ca.center[i] - cb.center[i]);
                    separated = std::sqrt(d2) >= 8.0 * std::max(ca.sigma, cb.sigma);
                } else {
                    const auto [alo, ahi] = ca.support_box();
                    const auto [blo, bhi] = cb.support_box();
                    for (std::size_t i = 0; i < alo.size() && !separated; ++i)
                        separated = ahi[i] < blo[i] || bhi[i] < alo[i];
                }
                if (!separated)
                    throw ConfigError("mixture: components " + std::to_string(a) + " and " + std::to_string(b) +
                                      " overlap");
            }
    }

    /// Three equal-weight boxes with per-dimension intervals [0,.3], [.35,.65], [.7,1].
    static MixtureSpec three_bands(int record_dim = 1) {
        MixtureSpec s;
        s.record_dim = record_dim;
        s.components = {MixtureComponent::uniform(0.0, 0.3, record_dim),
                        MixtureComponent::uniform(0.35, 0.65, record_dim),
                        MixtureComponent::uniform(0.7, 1.0, record_dim)};
        return s;
    }
};

enum class DataSource : std::uint8_t { synthetic, ingested };

/// n x record_dim records in [0,1] with optional per-record labels.
struct LabeledDataset {
    Matrix records;
    std::optional<std::vector<int>> labels;
    DataSource source = DataSource::synthetic;

    std::size_t size() const { return static_cast<std::size_t>(records.rows()); }
    int record_dim() const { return static_cast<int>(records.cols()); }
    bool has_labels() const { return labels.has_value(); }

    bool operator==(const LabeledDataset& o) const {
        return identical(records, o.records) && labels == o.labels && source == o.source;
    }
};

inline LabeledDataset generate_mixture(const MixtureSpec& spec, std::size_t n, Rng& rng) {
    spec.validate();
    if (n < 1) throw ConfigError("generate_mixture: n must be >= 1");
    const auto w = spec.weights();
    std::discrete_distribution<int> pick(w.begin(), w.end());
    std::normal_distribution<double> gauss(0.0, 1.0);

    LabeledDataset ds;
    ds.records.resize(static_cast<Eigen::Index>(n), spec.record_dim);
    ds.labels.emplace(n);
    for (std::size_t r = 0; r < n; ++r) {
        const int m = pick(rng);
        (*ds.labels)[r] = m;
        const auto& c = spec.components[static_cast<std::size_t>(m)];
        for (int j = 0; j < spec.record_dim; ++j) {
            double v;
            if (c.kind == MixtureComponent::Kind::uniform) {
                std::uniform_real_distribution<double> u(c.lo[static_cast<std::size_t>(j)], c.hi[static_cast<std::size_t>(j)]);
                v = u(rng);
            } else {
                v = std::clamp(c.center[static_cast<std::size_t>(j)] + c.sigma * gauss(rng), 0.0, 1.0);
            }
            ds.records(static_cast<Eigen::Index>(r), j) = v;
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// FSGD binary format
//
//   "FSGD" | u8 version=1 | u32 record_dim | u32 n | u8 flags (bit0: labels)
//   | n * record_dim raw bytes | [n * u16 labels]
// All integers little-endian.

inline constexpr std::array<char, 4> kFsgdMagic{'F', 'S', 'G', 'D'};
inline constexpr std::uint8_t kFsgdVersion = 1;

/// Fixed-length raw payload records as stored on disk.
struct PayloadSet {
    std::uint32_t record_dim = 0;
    std::vector<std::uint8_t> bytes;  // count() * record_dim
    std::optional<std::vector<std::uint16_t>> labels;

    std::size_t count() const { return record_dim == 0 ? 0 : bytes.size() / record_dim; }
    std::span<const std::uint8_t> record(std::size_t i) const {
        return std::span<const std::uint8_t>(bytes).subspan(i * record_dim, record_dim);
    }

    bool operator==(const PayloadSet&) const = default;
};

/// Truncate or zero-pad variable-length payloads to `record_dim` bytes.
inline PayloadSet fit_payloads(const std::vector<std::vector<std::uint8_t>>& payloads, std::uint32_t record_dim,
                               std::optional<std::vector<std::uint16_t>> labels = std::nullopt) {
    if (record_dim == 0) throw ConfigError("record_dim must be >= 1");
    if (labels && labels->size() != payloads.size()) throw ConfigError("label count differs from payload count");
    PayloadSet set;
    set.record_dim = record_dim;
    set.bytes.assign(payloads.size() * record_dim, 0);
    for (std::size_t i = 0; i < payloads.size(); ++i) {
        const std::size_t keep = std::min<std::size_t>(payloads[i].size(), record_dim);
        std::copy_n(payloads[i].begin(), keep, set.bytes.begin() + static_cast<std::ptrdiff_t>(i * record_dim));
    }
    set.labels = std::move(labels);
    return set;
}

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    template <class T>
    T get_le(const char* what) {
        need(sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
        pos_ += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) const {
        if (data_.size() - pos_ < n) throw ParseError(std::string("truncated ") + what, pos_);
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_fsgd(const PayloadSet& set) {
    if (set.record_dim == 0) throw ConfigError("FSGD: record_dim must be >= 1");
    if (set.bytes.size() % set.record_dim != 0) throw ConfigError("FSGD: byte count not a multiple of record_dim");
    const auto n = static_cast<std::uint32_t>(set.count());
    if (set.labels && set.labels->size() != n) throw ConfigError("FSGD: label count differs from record count");
    std::vector<std::uint8_t> out(kFsgdMagic.begin(), kFsgdMagic.end());
    out.push_back(kFsgdVersion);
    detail::put_le<std::uint32_t>(out, set.record_dim);
    detail::put_le<std::uint32_t>(out, n);
    out.push_back(set.labels ? 0x01 : 0x00);
    out.insert(out.end(), set.bytes.begin(), set.bytes.end());
    if (set.labels)
        for (auto l : *set.labels) detail::put_le<std::uint16_t>(out, l);
    return out;
}

inline bool has_fsgd_magic(std::span<const std::uint8_t> data) {
    return data.size() >= 4 && std::equal(kFsgdMagic.begin(), kFsgdMagic.end(), data.begin(),
                                          [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; });
}

inline PayloadSet decode_fsgd(std::span<const std::uint8_t> data) {
    detail::ByteReader r(data);
    if (!has_fsgd_magic(data)) throw ParseError("bad FSGD magic", 0);
    r.take(4, "magic");
    const auto version = r.get_le<std::uint8_t>("version");
    if (version != kFsgdVersion) throw ParseError("unsupported FSGD version " + std::to_string(version), 4);
    PayloadSet set;
    set.record_dim = r.get_le<std::uint32_t>("record_dim");
    if (set.record_dim == 0) throw ParseError("FSGD record_dim is zero", 5);
    const auto n = r.get_le<std::uint32_t>("record count");
    const auto flag_pos = r.pos();
    const auto flags = r.get_le<std::uint8_t>("flags");
    if (flags & ~0x01u) throw ParseError("unknown FSGD flag bits", flag_pos);
    const auto body = r.take(static_cast<std::size_t>(n) * set.record_dim, "record data");
    set.bytes.assign(body.begin(), body.end());
    if (flags & 0x01u) {
        std::vector<std::uint16_t> labels(n);
        for (auto& l : labels) l = r.get_le<std::uint16_t>("labels");
        set.labels = std::move(labels);
    }
    if (r.remaining() != 0) throw ParseError("trailing bytes after FSGD payload", r.pos());
    return set;
}

inline void write_fsgd(const std::filesystem::path& path, const PayloadSet& set) {
    detail::write_file(path, encode_fsgd(set));
}

inline PayloadSet read_fsgd(const std::filesystem::path& path) { return decode_fsgd(detail::read_file(path)); }

/// Raw stream of u32-LE-length-prefixed payloads (headers already stripped upstream).
inline std::vector<std::vector<std::uint8_t>> decode_raw_payloads(std::span<const std::uint8_t> data) {
    detail::ByteReader r(data);
    std::vector<std::vector<std::uint8_t>> out;
    while (r.remaining() > 0) {
        const auto len = r.get_le<std::uint32_t>("payload length");
        const auto body = r.take(len, "payload");
        out.emplace_back(body.begin(), body.end());
    }
    return out;
}

inline std::vector<std::uint8_t> encode_raw_payloads(const std::vector<std::vector<std::uint8_t>>& payloads) {
    std::vector<std::uint8_t> out;
    for (const auto& p : payloads) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.size()));
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

/// Bytes b become reals b/255.
inline LabeledDataset to_dataset(const PayloadSet& set, DataSource source = DataSource::ingested) {
    LabeledDataset ds;
    ds.source = source;
    const auto n = static_cast<Eigen::Index>(set.count());
    ds.records.resize(n, set.record_dim);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < set.record_dim; ++j)
            ds.records(i, j) = static_cast<double>(set.bytes[static_cast<std::size_t>(i) * set.record_dim + static_cast<std::size_t>(j)]) / 255.0;
    if (set.labels) ds.labels.emplace(set.labels->begin(), set.labels->end());
    return ds;
}

/// Quantize [0,1] reals back to bytes (round(v*255)); exact inverse of to_dataset.
inline PayloadSet to_payloads(const LabeledDataset& ds) {
    PayloadSet set;
    set.record_dim = static_cast<std::uint32_t>(ds.record_dim());
    set.bytes.resize(ds.size() * set.record_dim);
    for (Eigen::Index i = 0; i < ds.records.rows(); ++i)
        for (Eigen::Index j = 0; j < ds.records.cols(); ++j)
            set.bytes[static_cast<std::size_t>(i) * set.record_dim + static_cast<std::size_t>(j)] =
                static_cast<std::uint8_t>(std::lround(std::clamp(ds.records(i, j), 0.0, 1.0) * 255.0));
    if (ds.labels) {
        std::vector<std::uint16_t> l;
        for (int v : *ds.labels) {
            if (v < 0 || v > 0xFFFF) throw ConfigError("label does not fit in u16");
            l.push_back(static_cast<std::uint16_t>(v));
        }
        set.labels = std::move(l);
    }
    return set;
}

/// Load an FSGD file or a raw length-prefixed payload stream and fit every
/// payload to `record_dim` bytes.
inline LabeledDataset ingest_payloads(std::span<const std::uint8_t> data, std::uint32_t record_dim = 2500) {
    if (has_fsgd_magic(data)) {
        const PayloadSet stored = decode_fsgd(data);
        if (stored.record_dim == record_dim) return to_dataset(stored);
        std::vector<std::vector<std::uint8_t>> payloads;
        payloads.reserve(stored.count());
        for (std::size_t i = 0; i < stored.count(); ++i) {
            const auto rec = stored.record(i);
            payloads.emplace_back(rec.begin(), rec.end());
        }
        return to_dataset(fit_payloads(payloads, record_dim, stored.labels));
    }
    return to_dataset(fit_payloads(decode_raw_payloads(data), record_dim));
}

inline LabeledDataset ingest_payloads(const std::filesystem::path& path, std::uint32_t record_dim = 2500) {
    return ingest_payloads(detail::read_file(path), record_dim);
}

// ---------------------------------------------------------------------------
// Partitioning and sampling

struct PartitionPlan {
    enum class Mode : std::uint8_t { iid, by_component };

    Mode mode = Mode::iid;
    int site_count = 1;
    std::vector<std::vector<int>> allow;  // by_component: labels each site may hold

    static PartitionPlan iid(int sites) { return {Mode::iid, sites, {}}; }

    static PartitionPlan by_component(std::vector<std::vector<int>> allow_lists) {
        const int n = static_cast<int>(allow_lists.size());
        return {Mode::by_component, n, std::move(allow_lists)};
    }

    /// Site d holds every component except (K-1-d) mod K.
    static PartitionPlan leave_one_out(int sites, int components) {
        std::vector<std::vector<int>> allow(static_cast<std::size_t>(sites));
        for (int d = 0; d < sites; ++d) {
            const int missing = ((components - 1 - d) % components + components) % components;
            for (int m = 0; m < components; ++m)
                if (m != missing || components == 1) allow[static_cast<std::size_t>(d)].push_back(m);
        }
        return by_component(std::move(allow));
    }
};

inline LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> rows) {
    LabeledDataset out;
    out.source = ds.source;
    out.records.resize(static_cast<Eigen::Index>(rows.size()), ds.records.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.records.row(static_cast<Eigen::Index>(i)) = ds.records.row(static_cast<Eigen::Index>(rows[i]));
    if (ds.labels) {
        std::vector<int> l(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) l[i] = (*ds.labels)[rows[i]];
        out.labels = std::move(l);
    }
    return out;
}

inline std::vector<LabeledDataset> partition(const LabeledDataset& ds, const PartitionPlan& plan, Rng& rng) {
    if (plan.site_count < 1) throw ConfigError("partition: need at least one site");
    const std::size_t n = ds.size();
    const auto sites = static_cast<std::size_t>(plan.site_count);
    std::vector<std::vector<std::size_t>> rows(sites);

    if (plan.mode == PartitionPlan::Mode::iid) {
        if (n < sites) throw ConfigError("partition: fewer records than sites");
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t at = 0;
        for (std::size_t d = 0; d < sites; ++d) {
            const std::size_t take = n / sites + (d < n % sites ? 1 : 0);
            rows[d].assign(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(at + take));
            std::sort(rows[d].begin(), rows[d].end());
            at += take;
        }
    } else {
        if (!ds.labels) throw ConfigError("partition: by-component mode needs labels");
        if (plan.allow.size() != sites) throw ConfigError("partition: one allow-list per site required");
        const auto& labels = *ds.labels;
        for (std::size_t d = 0; d < sites; ++d) {
            const auto& al = plan.allow[d];
            const bool hit = std::any_of(labels.begin(), labels.end(),
                                         [&](int l) { return std::find(al.begin(), al.end(), l) != al.end(); });
            if (!hit) throw ConfigError("partition: site " + std::to_string(d) + " allow-list matches no record");
        }
        std::vector<std::size_t> owners;
        for (std::size_t i = 0; i < n; ++i) {
            owners.clear();
            for (std::size_t d = 0; d < sites; ++d)
                if (std::find(plan.allow[d].begin(), plan.allow[d].end(), labels[i]) != plan.allow[d].end())
                    owners.push_back(d);
            if (owners.empty())
                throw ConfigError("partition: label " + std::to_string(labels[i]) + " is allowed at no site");
            std::size_t pick = 0;
            if (owners.size() > 1) pick = std::uniform_int_distribution<std::size_t>(0, owners.size() - 1)(rng);
            rows[owners[pick]].push_back(i);
        }
    }

    std::vector<LabeledDataset> out;
    for (std::size_t d = 0; d < sites; ++d) {
        if (rows[d].empty()) throw ConfigError("partition: site " + std::to_string(d) + " received no records");
        out.push_back(subset(ds, rows[d]));
    }
    return out;
}

/// B rows drawn uniformly with replacement.
inline Batch sample_minibatch(const LabeledDataset& ds, int batch, Rng& rng) {
    if (ds.size() == 0) throw ConfigError("sample_minibatch: empty dataset");
    if (batch < 1) throw ConfigError("sample_minibatch: batch must be >= 1");
    std::uniform_int_distribution<Eigen::Index> pick(0, ds.records.rows() - 1);
    Batch out(batch, ds.records.cols());
    for (int b = 0; b < batch; ++b) out.row(b) = ds.records.row(pick(rng));
    return out;
}

/// Scalar projection of a record: its mean normalized byte value.
template <class Row>
double packet_value(const Row& record) {
    return record.size() == 0 ? 0.0 : record.mean();
}

inline std::vector<double> packet_values(const Matrix& records) {
    std::vector<double> out(static_cast<std::size_t>(records.rows()));
    for (Eigen::Index i = 0; i < records.rows(); ++i) out[static_cast<std::size_t>(i)] = packet_value(records.row(i));
    return out;
}

}  // namespace fsgan
