#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace lab {

// Shortest-trip-safe decimal with 17 significant digits, '.' separator,
// independent of the global locale. Non-finite values print as nan/inf/-inf.
std::string format_real(double v);

double parse_real(const std::string& s);

std::vector<std::string> split_csv_line(const std::string& line);

/*
 * Minimal CSV table: header plus rows of preformatted cells. Rows are
 * terminated by '\n' only.
 */
class csv_table {
public:
    explicit csv_table(std::vector<std::string> header) : header_(std::move(header)) {}

    csv_table& row();
    csv_table& add(double v);
    csv_table& add(int v);
    csv_table& add(long v);
    csv_table& add(std::size_t v);
    csv_table& add(const std::string& v);
    csv_table& add(const char* v) { return add(std::string(v)); }
    csv_table& add_empty();

    std::string str() const;
    std::size_t rows() const { return rows_.size(); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// Matrix as CSV, one column per matrix column, with the given header.
std::string matrix_csv(const Eigen::MatrixXd& M, const std::vector<std::string>& header);

}  // namespace lab
