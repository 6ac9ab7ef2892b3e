#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "dricl/corpus.hpp"

namespace dricl::test {

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() /
            ("dricl-" + name + "-" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline TaskPool make_pool(const std::string& id, std::size_t n, std::size_t input_len = 3) {
  TaskPool pool;
  pool.task_id = id;
  pool.instruction_text = "Answer:";
  for (std::size_t i = 0; i < n; ++i) {
    std::string input(input_len, static_cast<char>('a' + i % 26));
    input += std::to_string(i);
    pool.examples.push_back({id, input, std::string(1, static_cast<char>('A' + i % 4))});
  }
  return pool;
}

}  // namespace dricl::test
