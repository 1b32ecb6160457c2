/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/io.hpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "ttp/deform.hpp"
#include "ttp/error.hpp"
#include "ttp/losses.hpp"
#include "ttp/objective.hpp"
#include "ttp/raster.hpp"
#include "ttp/solver.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace ttp {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Text output. Doubles are printed with 17 significant digits so that files
// round-trip and identical runs produce identical bytes.

inline std::string format_double(double x)
{
    if (!std::isfinite(x)) {
        return "null";
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

namespace detail {

inline bool is_scalar_array(const Json& j)
{
    if (!j.is_array()) {
        return false;
    }
    for (const auto& e : j) {
        if (e.is_structured()) {
            return false;
        }
    }
    return true;
}

inline void dump_json(const Json& j, std::string& out, int indent)
{
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
    switch (j.type()) {
    case Json::value_t::number_float:
        out += format_double(j.get<double>());
        return;
    case Json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out += "{\n";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) {
                out += ",\n";
            }
            first = false;
            out += inner + Json(it.key()).dump() + ": ";
            dump_json(it.value(), out, indent + 1);
        }
        out += "\n" + pad + "}";
        return;
    }
    case Json::value_t::array: {
        if (is_scalar_array(j)) {
            out += "[";
            for (std::size_t k = 0; k < j.size(); ++k) {
                if (k > 0) {
                    out += ", ";
                }
                dump_json(j[k], out, 0);
            }
            out += "]";
            return;
        }
        out += "[\n";
        for (std::size_t k = 0; k < j.size(); ++k) {
            if (k > 0) {
                out += ",\n";
            }
            out += inner;
            dump_json(j[k], out, indent + 1);
        }
        out += "\n" + pad + "]";
        return;
    }
    default:
        out += j.dump();
        return;
    }
}

} // namespace detail

/// Deterministic pretty printer: objects keep insertion order, scalar arrays stay on one line.
inline std::string dump_json(const Json& j)
{
    std::string out;
    detail::dump_json(j, out, 0);
    out += "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Parsing with line-numbered diagnostics.

namespace detail {

// Minimal scanner over already-valid JSON text, used to turn a JSON pointer
// into a line number for shape errors.
class JsonLocator
{
public:
    explicit JsonLocator(std::string_view text) : s_(text) {}

    std::size_t line_of(const Json::json_pointer& ptr)
    {
        pos_ = 0;
        ws();
        const std::string path = ptr.to_string();
        std::size_t start = 1;
        while (start <= path.size() && !path.empty()) {
            std::size_t end = path.find('/', start);
            if (end == std::string::npos) {
                end = path.size();
            }
            std::string token = path.substr(start, end - start);
            unescape(token);
            if (!descend(token)) {
                break;
            }
            start = end + 1;
        }
        return 1 + static_cast<std::size_t>(std::count(s_.begin(), s_.begin() + static_cast<std::ptrdiff_t>(std::min(pos_, s_.size())), '\n'));
    }

private:
    static void unescape(std::string& t)
    {
        for (std::size_t k = 0; (k = t.find('~', k)) != std::string::npos; ++k) {
            t.replace(k, 2, k + 1 < t.size() && t[k + 1] == '1' ? "/" : "~");
        }
    }

    void ws()
    {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) {
            ++pos_;
        }
    }

    std::string string_token()
    {
        std::string out;
        ++pos_;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            if (s_[pos_] == '\\') {
                ++pos_;
            }
            out.push_back(s_[pos_++]);
        }
        ++pos_;
        return out;
    }

    void skip_value()
    {
        ws();
        if (pos_ >= s_.size()) {
            return;
        }
        const char ch = s_[pos_];
        if (ch == '"') {
            string_token();
        } else if (ch == '{' || ch == '[') {
            int depth = 0;
            while (pos_ < s_.size()) {
                const char c = s_[pos_];
                if (c == '"') {
                    string_token();
                    continue;
                }
                if (c == '{' || c == '[') {
                    ++depth;
                } else if (c == '}' || c == ']') {
                    if (--depth == 0) {
                        ++pos_;
                        break;
                    }
                }
                ++pos_;
            }
        } else {
            while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != '}' && s_[pos_] != ']' && !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
                ++pos_;
            }
        }
        ws();
    }

    bool descend(const std::string& token)
    {
        ws();
        if (pos_ >= s_.size()) {
            return false;
        }
        if (s_[pos_] == '{') {
            ++pos_;
            for (;;) {
                ws();
                if (pos_ >= s_.size() || s_[pos_] != '"') {
                    return false;
                }
                const std::string key = string_token();
                ws();
                ++pos_; // ':'
                ws();
                if (key == token) {
                    return true;
                }
                skip_value();
                if (pos_ >= s_.size() || s_[pos_] != ',') {
                    return false;
                }
                ++pos_;
            }
        }
        if (s_[pos_] == '[') {
            ++pos_;
            ws();
            std::size_t index = 0;
            try {
                index = static_cast<std::size_t>(std::stoul(token));
            } catch (const std::exception&) {
                return false;
            }
            for (std::size_t k = 0; k < index; ++k) {
                skip_value();
                if (pos_ >= s_.size() || s_[pos_] != ',') {
                    return false;
                }
                ++pos_;
                ws();
            }
            return true;
        }
        return false;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Parsed JSON document that remembers its source text for error locations.
class JsonDocument
{
public:
    static JsonDocument parse(std::string text)
    {
        JsonDocument doc;
        doc.text_ = std::move(text);
        try {
            doc.root_ = Json::parse(doc.text_);
        } catch (const Json::parse_error& e) {
            const auto offset = std::min<std::size_t>(e.byte, doc.text_.size());
            const auto line = 1 + static_cast<std::size_t>(std::count(doc.text_.begin(), doc.text_.begin() + static_cast<std::ptrdiff_t>(offset > 0 ? offset - 1 : 0), '\n'));
            throw ParseError(line, "invalid JSON");
        }
        return doc;
    }

    const Json& root() const noexcept { return root_; }

    [[noreturn]] void fail(const Json::json_pointer& where, const std::string& what) const
    {
        detail::JsonLocator locator(text_);
        throw ParseError(locator.line_of(where), (where.empty() ? std::string("document") : where.to_string()) + ": " + what);
    }

    const Json& at(const Json::json_pointer& where) const
    {
        if (!root_.contains(where)) {
            fail(where.parent_pointer(), "missing \"" + where.back() + "\"");
        }
        return root_.at(where);
    }

    double number(const Json::json_pointer& where) const
    {
        const Json& j = at(where);
        if (!j.is_number()) {
            fail(where, "expected a number");
        }
        return j.get<double>();
    }

    long integer(const Json::json_pointer& where) const
    {
        const Json& j = at(where);
        if (!j.is_number_integer() && !j.is_number_unsigned()) {
            fail(where, "expected an integer");
        }
        return j.get<long>();
    }

    const Json& array(const Json::json_pointer& where, std::size_t expected_size = SIZE_MAX) const
    {
        const Json& j = at(where);
        if (!j.is_array()) {
            fail(where, "expected an array");
        }
        if (expected_size != SIZE_MAX && j.size() != expected_size) {
            fail(where, "expected " + std::to_string(expected_size) + " entries, found " + std::to_string(j.size()));
        }
        return j;
    }

    Eigen::VectorXd vector(const Json::json_pointer& where, std::size_t expected_size = SIZE_MAX) const
    {
        const Json& j = array(where, expected_size);
        Eigen::VectorXd out(static_cast<Eigen::Index>(j.size()));
        for (std::size_t k = 0; k < j.size(); ++k) {
            out(static_cast<Eigen::Index>(k)) = number(where / k);
        }
        return out;
    }

    /// Array of `rows`-element arrays, returned column-wise as rows x M.
    Eigen::MatrixXd columns(const Json::json_pointer& where, Eigen::Index rows) const
    {
        const Json& j = array(where);
        Eigen::MatrixXd out(rows, static_cast<Eigen::Index>(j.size()));
        for (std::size_t k = 0; k < j.size(); ++k) {
            out.col(static_cast<Eigen::Index>(k)) = vector(where / k, static_cast<std::size_t>(rows));
        }
        return out;
    }

private:
    std::string text_;
    Json root_;
};

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& contents)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path);
    }
    out << contents;
    if (!out) {
        throw Error("write failed for " + path);
    }
}

// ---------------------------------------------------------------------------
// Helpers for Eigen <-> JSON.

template <class Derived>
Json to_json_array(const Eigen::DenseBase<Derived>& v)
{
    Json a = Json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        a.push_back(static_cast<double>(v(k)));
    }
    return a;
}

inline Json columns_to_json(const Eigen::MatrixXd& m)
{
    Json a = Json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
        a.push_back(to_json_array(m.col(k)));
    }
    return a;
}

// ---------------------------------------------------------------------------
// Observation: { "points": [[x, y], ...], "visibility": [v, ...] }

inline Json observation_to_json(const Observation& obs)
{
    Json j;
    j["points"] = columns_to_json(obs.points);
    j["visibility"] = to_json_array(obs.visibility);
    return j;
}

inline Observation parse_observation(const std::string& text)
{
    const auto doc = JsonDocument::parse(text);
    Observation obs;
    obs.points = doc.columns(Json::json_pointer("/points"), 2);
    obs.visibility = doc.vector(Json::json_pointer("/visibility"));
    if (obs.visibility.size() != obs.points.cols()) {
        doc.fail(Json::json_pointer("/visibility"), "expected " + std::to_string(obs.points.cols()) + " entries, found "
                                                        + std::to_string(obs.visibility.size()));
    }
    for (Eigen::Index i = 0; i < obs.visibility.size(); ++i) {
        if (!(obs.visibility(i) >= 0.0 && obs.visibility(i) <= 1.0)) {
            doc.fail(Json::json_pointer("/visibility") / static_cast<std::size_t>(i), "visibility must lie in [0, 1]");
        }
    }
    return obs;
}

// ---------------------------------------------------------------------------
// Fit result: { "r": [3], "t": [2], "s": f, "c": [K], "trace": [...], "converged": b, "evals": n }

inline Json fit_result_to_json(const FitResult& result)
{
    Json j;
    j["r"] = to_json_array(result.r);
    j["t"] = to_json_array(result.t);
    j["s"] = result.s;
    j["c"] = to_json_array(result.c);
    Json trace = Json::array();
    for (const double v : result.objective_trace) {
        trace.push_back(v);
    }
    j["trace"] = trace;
    j["converged"] = result.converged;
    j["evals"] = result.evals;
    return j;
}

inline FitResult parse_fit_result(const std::string& text)
{
    const auto doc = JsonDocument::parse(text);
    FitResult result;
    result.r = doc.vector(Json::json_pointer("/r"), 3);
    result.t = doc.vector(Json::json_pointer("/t"), 2);
    result.s = doc.number(Json::json_pointer("/s"));
    result.c = doc.vector(Json::json_pointer("/c"));
    const Eigen::VectorXd trace = doc.vector(Json::json_pointer("/trace"));
    result.objective_trace.assign(trace.data(), trace.data() + trace.size());
    const Json& conv = doc.at(Json::json_pointer("/converged"));
    if (!conv.is_boolean()) {
        doc.fail(Json::json_pointer("/converged"), "expected a boolean");
    }
    result.converged = conv.get<bool>();
    result.evals = static_cast<int>(doc.integer(Json::json_pointer("/evals")));
    if (!(result.s > 0.0)) {
        doc.fail(Json::json_pointer("/s"), "scale must be positive");
    }
    result.objective = result.objective_trace.empty() ? 0.0 : result.objective_trace.back();
    return result;
}

// ---------------------------------------------------------------------------
// Basis: { "k": K, "n": N, "blocks": [[3K row-major values] x N] }
// Binary: "TTPB", u32 N, u32 K, u32 reserved, then N blocks of 3K float64 (row-major), little endian.

inline Json basis_to_json(const DeformationBasis& basis)
{
    const auto K = basis.component_count();
    Json j;
    j["k"] = K;
    j["n"] = basis.vertex_count();
    Json blocks = Json::array();
    for (Eigen::Index i = 0; i < basis.vertex_count(); ++i) {
        Json b = Json::array();
        for (Eigen::Index row = 0; row < 3; ++row) {
            for (Eigen::Index k = 0; k < K; ++k) {
                b.push_back(basis.block(i)(row, k));
            }
        }
        blocks.push_back(b);
    }
    j["blocks"] = blocks;
    return j;
}

inline DeformationBasis parse_basis_json(const std::string& text)
{
    const auto doc = JsonDocument::parse(text);
    const long K = doc.integer(Json::json_pointer("/k"));
    const long N = doc.integer(Json::json_pointer("/n"));
    if (K < 0) {
        doc.fail(Json::json_pointer("/k"), "component count must be nonnegative");
    }
    if (N < 0) {
        doc.fail(Json::json_pointer("/n"), "vertex count must be nonnegative");
    }
    const Json::json_pointer where("/blocks");
    doc.array(where, static_cast<std::size_t>(N));
    DeformationBasis basis(N, K);
    for (long i = 0; i < N; ++i) {
        const Eigen::VectorXd flat = doc.vector(where / static_cast<std::size_t>(i), static_cast<std::size_t>(3 * K));
        for (Eigen::Index row = 0; row < 3; ++row) {
            for (Eigen::Index k = 0; k < K; ++k) {
                basis.block(i)(row, k) = flat(row * K + k);
            }
        }
    }
    return basis;
}

namespace detail {

template <class T>
T to_little(T value)
{
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &value, sizeof(T));
        std::reverse(b, b + sizeof(T));
        std::memcpy(&value, b, sizeof(T));
    }
    return value;
}

template <class T>
void put(std::string& out, T value)
{
    value = to_little(value);
    char b[sizeof(T)];
    std::memcpy(b, &value, sizeof(T));
    out.append(b, sizeof(T));
}

template <class T>
T get(std::string_view in, std::size_t offset)
{
    T value;
    std::memcpy(&value, in.data() + offset, sizeof(T));
    return to_little(value);
}

} // namespace detail

inline std::string basis_to_binary(const DeformationBasis& basis)
{
    const auto N = basis.vertex_count();
    const auto K = basis.component_count();
    std::string out = "TTPB";
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(N));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(K));
    detail::put<std::uint32_t>(out, 0);
    out.reserve(16 + static_cast<std::size_t>(N * 3 * K) * 8);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index row = 0; row < 3; ++row) {
            for (Eigen::Index k = 0; k < K; ++k) {
                detail::put<double>(out, basis.block(i)(row, k));
            }
        }
    }
    return out;
}

inline bool is_binary_basis(std::string_view bytes) { return bytes.size() >= 4 && bytes.substr(0, 4) == "TTPB"; }

inline DeformationBasis parse_basis_binary(std::string_view bytes)
{
    if (bytes.size() < 16 || !is_binary_basis(bytes)) {
        throw ParseError(0, "binary basis: bad header");
    }
    const auto N = static_cast<Eigen::Index>(detail::get<std::uint32_t>(bytes, 4));
    const auto K = static_cast<Eigen::Index>(detail::get<std::uint32_t>(bytes, 8));
    const auto expected = 16 + static_cast<std::size_t>(N) * 3 * static_cast<std::size_t>(K) * 8;
    if (bytes.size() != expected) {
        throw ParseError(0, "binary basis: expected " + std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()));
    }
    DeformationBasis basis(N, K);
    std::size_t offset = 16;
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index row = 0; row < 3; ++row) {
            for (Eigen::Index k = 0; k < K; ++k, offset += 8) {
                basis.block(i)(row, k) = detail::get<double>(bytes, offset);
            }
        }
    }
    return basis;
}

/// Reads either basis format, chosen by the magic bytes.
inline DeformationBasis parse_basis(const std::string& bytes)
{
    return is_binary_basis(bytes) ? parse_basis_binary(bytes) : parse_basis_json(bytes);
}

// ---------------------------------------------------------------------------
// Keypoints: { "rows": [ { "indices": [...], "weights": [...] } ] } and { "keypoints": [[x, y], ...] }

inline Json keypoint_regressor_to_json(const KeypointRegressor& regressor)
{
    Json rows = Json::array();
    for (const auto& row : regressor.rows) {
        Json r;
        r["indices"] = row.indices;
        Json w = Json::array();
        for (const double x : row.weights) {
            w.push_back(x);
        }
        r["weights"] = w;
        rows.push_back(r);
    }
    Json j;
    j["rows"] = rows;
    return j;
}

inline KeypointRegressor parse_keypoint_regressor(const std::string& text)
{
    const auto doc = JsonDocument::parse(text);
    const Json::json_pointer where("/rows");
    const Json& rows = doc.array(where);
    KeypointRegressor reg;
    for (std::size_t m = 0; m < rows.size(); ++m) {
        KeypointRegressor::Row row;
        const Json& idx = doc.array(where / m / "indices");
        for (std::size_t k = 0; k < idx.size(); ++k) {
            row.indices.push_back(static_cast<int>(doc.integer(where / m / "indices" / k)));
        }
        const Eigen::VectorXd w = doc.vector(where / m / "weights", idx.size());
        row.weights.assign(w.data(), w.data() + w.size());
        reg.rows.push_back(std::move(row));
    }
    return reg;
}

inline Json annotations_to_json(const Points2& keypoints)
{
    Json j;
    j["keypoints"] = columns_to_json(keypoints);
    return j;
}

inline Points2 parse_annotations(const std::string& text)
{
    const auto doc = JsonDocument::parse(text);
    return doc.columns(Json::json_pointer("/keypoints"), 2);
}

// ---------------------------------------------------------------------------
// Mask run-length JSON: { "width": W, "height": H, "runs": [[start, length], ...] },
// starts are row-major pixel indices.

inline Json mask_to_rle_json(const SilhouetteMask& mask)
{
    Json runs = Json::array();
    const std::size_t n = mask.bits.size();
    for (std::size_t k = 0; k < n;) {
        if (!mask.bits[k]) {
            ++k;
            continue;
        }
        std::size_t end = k;
        while (end < n && mask.bits[end]) {
            ++end;
        }
        runs.push_back(Json::array({k, end - k}));
        k = end;
    }
    Json j;
    j["width"] = mask.width;
    j["height"] = mask.height;
    j["runs"] = runs;
    return j;
}

inline SilhouetteMask parse_mask_rle(const std::string& text)
{
    const auto doc = JsonDocument::parse(text);
    const long w = doc.integer(Json::json_pointer("/width"));
    const long h = doc.integer(Json::json_pointer("/height"));
    if (w <= 0 || h <= 0) {
        doc.fail(Json::json_pointer("/width"), "mask dimensions must be positive");
    }
    SilhouetteMask mask(static_cast<int>(w), static_cast<int>(h));
    const Json::json_pointer where("/runs");
    const Json& runs = doc.array(where);
    for (std::size_t r = 0; r < runs.size(); ++r) {
        doc.array(where / r, 2);
        const long start = doc.integer(where / r / 0);
        const long len = doc.integer(where / r / 1);
        if (start < 0 || len < 0 || static_cast<std::size_t>(start + len) > mask.bits.size()) {
            doc.fail(where / r, "run outside the mask");
        }
        std::fill_n(mask.bits.begin() + start, len, static_cast<unsigned char>(1));
    }
    return mask;
}

// ---------------------------------------------------------------------------

/// CSV of (iteration, objective), iterations counted from 1.
inline std::string trace_csv(const std::vector<double>& trace)
{
    std::string out = "iteration,objective\n";
    for (std::size_t k = 0; k < trace.size(); ++k) {
        out += std::to_string(k + 1) + "," + format_double(trace[k]) + "\n";
    }
    return out;
}

} // namespace ttp
