// CSV emission for experiment artifacts. Every table is numeric: named
// columns, rows of doubles written with 17 significant digits so values
// round-trip bit-exactly, preceded by #version and #config-hash provenance
// comment lines. Column order is part of each experiment's public contract.

#ifndef CLOAKSIM_CSVOUT_HPP
#define CLOAKSIM_CSVOUT_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace cloaksim::csvout {

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add_row(std::vector<double> row);  // width must match columns
};

// %.17g: shortest fixed-precision form that reparses to the same bits.
std::string format_double(double v);

std::string render(const Table& t, const std::string& version, std::uint64_t config_hash);
void write_table(const std::string& path, const Table& t, const std::string& version,
                 std::uint64_t config_hash);

}  // namespace cloaksim::csvout

#endif
