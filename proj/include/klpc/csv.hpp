#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace klpc::csv {

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

class Writer {
 public:
  Writer(std::ostream& out, std::vector<std::string> header);

  Writer& operator<<(double value);
  Writer& operator<<(std::size_t value);
  Writer& operator<<(int value);
  Writer& operator<<(std::string_view value);
  void end_row();

 private:
  void separator();
  std::ostream& out_;
  std::size_t columns_;
  std::size_t column_ = 0;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::size_t col) const;
};

Table read(const std::filesystem::path& path);
Table parse(std::string_view text, const std::string& source = "<memory>");

}  // namespace klpc::csv
