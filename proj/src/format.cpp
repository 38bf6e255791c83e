#include "lab/format.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "lab/errors.hpp"

namespace lab {

std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) v = 0.0;  // no negative zero in artifacts
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    if (res.ec != std::errc()) throw invalid_argument("failed to format real");
    return std::string(buf, res.ptr);
}

double parse_real(const std::string& s) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) throw invalid_argument("not a real number: '" + s + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

csv_table& csv_table::row() {
    rows_.emplace_back();
    return *this;
}

csv_table& csv_table::add(double v) { return add(format_real(v)); }
csv_table& csv_table::add(int v) { return add(std::to_string(v)); }
csv_table& csv_table::add(long v) { return add(std::to_string(v)); }
csv_table& csv_table::add(std::size_t v) { return add(std::to_string(v)); }

csv_table& csv_table::add(const std::string& v) {
    if (rows_.empty()) rows_.emplace_back();
    if (v.find_first_of(",\n") != std::string::npos) throw invalid_argument("CSV cell may not contain ',' or newline");
    rows_.back().push_back(v);
    return *this;
}

csv_table& csv_table::add_empty() { return add(std::string()); }

std::string csv_table::str() const {
    std::string out;
    for (std::size_t k = 0; k < header_.size(); ++k) {
        if (k) out += ',';
        out += header_[k];
    }
    out += '\n';
    for (const auto& r : rows_) {
        if (r.size() != header_.size()) throw dimension_mismatch("CSV row width differs from header");
        for (std::size_t k = 0; k < r.size(); ++k) {
            if (k) out += ',';
            out += r[k];
        }
        out += '\n';
    }
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!os) throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string matrix_csv(const Eigen::MatrixXd& M, const std::vector<std::string>& header) {
    if (static_cast<Eigen::Index>(header.size()) != M.cols()) throw dimension_mismatch("header width differs from matrix");
    csv_table t(header);
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        t.row();
        for (Eigen::Index j = 0; j < M.cols(); ++j) t.add(M(i, j));
    }
    return t.str();
}

}  // namespace lab
