#include "cloaksim/csvout.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cloaksim::csvout {

void Table::add_row(std::vector<double> row) {
  if (row.size() != columns.size())
    throw std::runtime_error("Table error: row width does not match the header");
  rows.push_back(std::move(row));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string render(const Table& t, const std::string& version, std::uint64_t config_hash) {
  if (t.columns.empty()) throw std::runtime_error("render error: table has no columns");
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
  std::string out;
  out += "#version ";
  out += version;
  out += "\n#config-hash ";
  out += hash;
  out += '\n';
  for (size_t i = 0; i < t.columns.size(); ++i) {
    if (i) out += ',';
    out += t.columns[i];
  }
  out += '\n';
  for (const auto& row : t.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_double(row[i]);
    }
    out += '\n';
  }
  return out;
}

void write_table(const std::string& path, const Table& t, const std::string& version,
                 std::uint64_t config_hash) {
  std::string body = render(t, version, config_hash);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_table error: cannot open " + path);
  os.write(body.data(), std::streamsize(body.size()));
  if (!os) throw std::runtime_error("write_table error: write failed for " + path);
}

}  // namespace cloaksim::csvout
