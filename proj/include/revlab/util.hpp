#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace revlab {

std::string slurp_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& contents);

std::vector<std::string> split(const std::string& s, char sep);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

// FNV-1a over bytes; used for config hashing of canonical JSON dumps
uint64_t fnv1a(const std::string& bytes);
std::string hex64(uint64_t x);

// simple CSV table: first row is the header. Cells never contain commas here
// (token ids, numbers, enum names), so no quoting is implemented or accepted.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::filesystem::path& p);
void write_csv(const std::filesystem::path& p, const CsvTable& t);

}  // namespace revlab
