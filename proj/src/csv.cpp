#include "klpc/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "klpc/error.hpp"

namespace klpc::csv {

std::string format_double(double value) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, value);
  return std::string(buffer, result.ptr);
}

Writer::Writer(std::ostream& out, std::vector<std::string> header)
    : out_(out), columns_(header.size()) {
  for (std::size_t c = 0; c < header.size(); ++c) out_ << (c ? "," : "") << header[c];
  out_ << '\n';
}

void Writer::separator() {
  if (column_ >= columns_) throw InputError("csv row has more fields than the header");
  if (column_++ > 0) out_ << ',';
}

Writer& Writer::operator<<(double value) {
  separator();
  out_ << format_double(value);
  return *this;
}

Writer& Writer::operator<<(std::size_t value) {
  separator();
  out_ << value;
  return *this;
}

Writer& Writer::operator<<(int value) {
  separator();
  out_ << value;
  return *this;
}

Writer& Writer::operator<<(std::string_view value) {
  separator();
  out_ << value;
  return *this;
}

void Writer::end_row() {
  if (column_ != columns_) throw InputError("csv row has fewer fields than the header");
  out_ << '\n';
  column_ = 0;
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return c;
  throw InputError("csv is missing column '" + std::string(name) + "'");
}

double Table::number(std::size_t row, std::size_t col) const {
  const std::string& field = rows.at(row).at(col);
  double value = 0.0;
  const auto result = std::from_chars(field.data(), field.data() + field.size(), value);
  if (result.ec != std::errc{} || result.ptr != field.data() + field.size())
    throw InputError("csv row " + std::to_string(row + 2) + ": '" + field + "' is not a number");
  return value;
}

namespace {
std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}
}  // namespace

Table parse(std::string_view text, const std::string& source) {
  Table table;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fields = split(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size())
      throw InputError(source + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw InputError(source + ": empty csv");
  return table;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

}  // namespace klpc::csv
