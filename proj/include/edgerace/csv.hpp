#ifndef EDGERACE_CSV_HPP
#define EDGERACE_CSV_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace edgerace {

/// Shortest text that still round-trips: printf's %.17g.
std::string format_number(double value);

/// Splits one CSV line on commas (no quoting; the tables here never need it).
std::vector<std::string> split_csv_line(const std::string& line);

/// Column-named table of numbers or strings, written as plain CSV.
class CsvTable {
public:
    using Cell = std::variant<double, long long, std::string>;

    explicit CsvTable(std::vector<std::string> columns);

    void add_row(std::vector<Cell> row);
    const std::vector<std::string>& columns() const { return columns_; }
    std::size_t rows() const { return rows_.size(); }

    void write(std::ostream& out) const;
    std::string str() const;

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<Cell>> rows_;
};

/// Writes text to a sibling temporary file and renames it over the target.
void write_file_atomically(const std::filesystem::path& path, const std::string& contents);

} // namespace edgerace

#endif
