#pragma once

#include "bnrm/measure_change.hpp"
#include "bnrm/model.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace bnrm {

// ---------------------------------------------------------------------------
// Hashing and number formatting
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Shortest round-trip-safe text: 17 significant digits.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Canonical text of the model parameters; hashed into every manifest and dump.
inline std::string canonical_params(const ModelParams& p) {
    std::string s = "activity=" + format_double(p.activity) + ";initial_activity_time=" +
                    format_double(p.initial_activity_time) + ";s_star_0=" + format_double(p.s_star_0) +
                    ";horizon=" + format_double(p.horizon) + ";lambda=";
    const auto& br = p.net_risk_adjusted_return.breaks();
    const auto& va = p.net_risk_adjusted_return.values();
    for (std::size_t j = 0; j < br.size(); ++j) s += (j ? "," : "") + format_double(br[j]) + ":" + format_double(va[j]);
    return s;
}

inline std::uint64_t params_hash(const ModelParams& p) { return fnv1a(canonical_params(p)); }

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

class CsvWriter {
public:
    explicit CsvWriter(std::ostream& os) : os_(os) {}

    CsvWriter& field(std::string_view s) {
        sep();
        if (s.find_first_of(",\"\r\n") == std::string_view::npos) {
            os_ << s;
        } else {
            os_ << '"';
            for (char c : s) {
                if (c == '"') os_ << '"';
                os_ << c;
            }
            os_ << '"';
        }
        return *this;
    }
    CsvWriter& field(const char* s) { return field(std::string_view(s)); }
    CsvWriter& field(const std::string& s) { return field(std::string_view(s)); }
    CsvWriter& field(double x) { return field(format_double(x)); }
    CsvWriter& field(bool b) { return field(b ? "true" : "false"); }
    template <class I>
        requires std::is_integral_v<I>
    CsvWriter& field(I v) {
        return field(std::to_string(v));
    }
    CsvWriter& empty() { return field(std::string_view{}); }

    template <class... Ts>
    CsvWriter& row(const Ts&... xs) {
        (field(xs), ...);
        return end();
    }

    CsvWriter& end() {
        os_ << "\r\n";
        first_ = true;
        return *this;
    }

private:
    void sep() {
        if (!first_) os_ << ',';
        first_ = false;
    }
    std::ostream& os_;
    bool first_ = true;
};

/// Splits CSV text into records; quoted fields may hold separators and quotes.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> out;
    std::vector<std::string> rec;
    std::string cur;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = any = true;
        } else if (c == ',') {
            rec.push_back(std::move(cur));
            cur.clear();
            any = true;
        } else if (c == '\r' || c == '\n') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            rec.push_back(std::move(cur));
            out.push_back(std::move(rec));
            rec.clear();
            cur.clear();
            any = false;
        } else {
            cur += c;
            any = true;
        }
    }
    if (any || !cur.empty()) {
        rec.push_back(std::move(cur));
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PathSet export
// ---------------------------------------------------------------------------

/// One row per path-time sample. Columns missing from the PathSet are left empty.
inline void write_paths_csv(std::ostream& os, const PathSet& ps) {
    CsvWriter w(os);
    w.row("path_id", "t", "s_star", "lambda", "x0");
    const bool has_l = ps.lambda_density.size() > 0, has_x = ps.x0.size() > 0;
    for (std::size_t i = 0; i < ps.n_paths(); ++i)
        for (std::size_t k = 0; k < ps.n_times(); ++k) {
            const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(k);
            w.field(i).field(ps.grid[k]).field(ps.s_star(r, c));
            has_l ? w.field(ps.lambda_density(r, c)) : w.empty();
            has_x ? w.field(ps.x0(r, c)) : w.empty();
            w.end();
        }
}

inline constexpr std::array<char, 8> kDumpMagic{'B', 'N', 'R', 'M', 'P', 'S', '0', '1'};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int j = 0; j < 8; ++j) b[j] = static_cast<char>((v >> (8 * j)) & 0xff);
    os.write(b, 8);
}

inline void put_f64(std::ostream& os, double x) { put_u64(os, std::bit_cast<std::uint64_t>(x)); }

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("path dump truncated", {});
    std::uint64_t v = 0;
    for (int j = 7; j >= 0; --j) v = (v << 8) | b[j];
    return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace detail

struct PathDumpHeader {
    std::uint64_t seed = 0;
    std::uint64_t params_hash = 0;
    std::uint64_t n_paths = 0;
    std::uint64_t n_times = 0;
    std::uint64_t flags = 0;  // bit 0: Euler, bit 1: P, bit 2: lambda stored, bit 3: x0 stored
};

/// Little-endian layout: magic, header words, times, then per path S*, [Lambda], [X0].
inline void write_paths_binary(std::ostream& os, const PathSet& ps, const ModelParams& params) {
    const bool has_l = ps.lambda_density.size() > 0, has_x = ps.x0.size() > 0;
    os.write(kDumpMagic.data(), kDumpMagic.size());
    const std::uint64_t flags = (ps.scheme == Scheme::Euler ? 1u : 0u) | (ps.measure == Measure::P ? 2u : 0u) |
                                (has_l ? 4u : 0u) | (has_x ? 8u : 0u);
    for (std::uint64_t v : {ps.seed, params_hash(params), static_cast<std::uint64_t>(ps.n_paths()),
                            static_cast<std::uint64_t>(ps.n_times()), flags})
        detail::put_u64(os, v);
    for (double t : ps.grid.times()) detail::put_f64(os, t);
    for (std::size_t i = 0; i < ps.n_paths(); ++i) {
        for (const Matrix* m : {&ps.s_star, &ps.lambda_density, &ps.x0}) {
            if (m->size() == 0) continue;
            for (double v : row_span(*m, i)) detail::put_f64(os, v);
        }
    }
}

inline PathSet read_paths_binary(std::istream& is, PathDumpHeader* header = nullptr) {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kDumpMagic) throw DataError("not a path dump", {});
    PathDumpHeader h;
    h.seed = detail::get_u64(is);
    h.params_hash = detail::get_u64(is);
    h.n_paths = detail::get_u64(is);
    h.n_times = detail::get_u64(is);
    h.flags = detail::get_u64(is);
    if (h.n_times == 0 || h.n_times > (1ull << 32) || h.n_paths > (1ull << 40)) throw DataError("path dump header corrupt", {});
    std::vector<double> t(h.n_times);
    for (double& x : t) x = detail::get_f64(is);
    PathSet ps;
    ps.grid = TimeGrid(std::move(t));
    ps.seed = h.seed;
    ps.scheme = h.flags & 1u ? Scheme::Euler : Scheme::Exact;
    ps.measure = h.flags & 2u ? Measure::P : Measure::QStar;
    const auto n = static_cast<Eigen::Index>(h.n_paths), nt = static_cast<Eigen::Index>(h.n_times);
    ps.s_star.resize(n, nt);
    if (h.flags & 4u) ps.lambda_density.resize(n, nt);
    if (h.flags & 8u) ps.x0.resize(n, nt);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Matrix* m : {&ps.s_star, &ps.lambda_density, &ps.x0}) {
            if (m->size() == 0) continue;
            for (Eigen::Index k = 0; k < nt; ++k) (*m)(i, k) = detail::get_f64(is);
        }
    ps.stream_ids.resize(h.n_paths);
    for (std::size_t i = 0; i < h.n_paths; ++i) ps.stream_ids[i] = i;
    if (header) *header = h;
    return ps;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

inline void write_martingale_csv(std::ostream& os, const std::vector<MartingaleCheckpoint>& rows) {
    CsvWriter w(os);
    w.row("checkpoint", "mean", "se", "z");
    for (const auto& r : rows) w.row(r.time, r.mean, r.se, r.z);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path, {});
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace bnrm
