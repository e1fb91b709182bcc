#pragma once
// Helpers shared by the test binaries: temp dirs, subprocesses, the Python
// oracle, and synthetic manifests.

#include <stdlib.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace testsupport {

namespace fs = std::filesystem;

inline const fs::path kSourceDir = NESTCV_SOURCE_DIR;
inline const fs::path kCliPath = NESTCV_CLI_PATH;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "nestcv-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

// Runs through /bin/sh; stdout (and stderr when merge_stderr) captured.
inline CommandResult run_command(const std::string& cmd, bool merge_stderr = true) {
  CommandResult r;
  FILE* pipe = ::popen((cmd + (merge_stderr ? " 2>&1" : "")).c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline CommandResult run_cli(const std::string& args, bool merge_stderr = true) {
  return run_command(quote(kCliPath.string()) + " " + args, merge_stderr);
}

// Independent Python reference implementation (tests/oracles/reference.py).
inline nlohmann::json oracle(const std::vector<std::string>& args) {
  std::string cmd = "python3 " + quote((kSourceDir / "tests/oracles/reference.py").string());
  for (const auto& a : args) cmd += " " + quote(a);
  const auto r = run_command(cmd, false);
  if (r.exit_code != 0) throw std::runtime_error("oracle failed: " + cmd);
  return nlohmann::json::parse(r.output);
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline fs::path fixture(const std::string& name) { return kSourceDir / "tests/fixtures" / name; }

// Two Gaussian blobs per class pair, `dims` features, groups of `group_size`
// items nested in `supergroups` supergroups. Labels alternate so every group
// is mixed.
inline std::string blobs_manifest(int items, int classes, int dims, double separation,
                                  unsigned seed, int group_size = 1, int supergroups = 4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::ostringstream out;
  out << "item_id,group_id,supergroup_id,label,features\n";
  for (int i = 0; i < items; ++i) {
    const int c = i % classes;
    const int g = i / group_size;
    out << "x" << i << ",g" << g << ",s" << (g % supergroups) << ",c" << c << ",";
    for (int d = 0; d < dims; ++d) {
      const double center = (d == c % dims) ? separation : 0.0;
      out << (d ? ";" : "") << center + noise(rng);
    }
    out << "\n";
  }
  return out.str();
}

// Chest X-ray shape: 4 datasets (supergroups) x 2 classes x 620 images, two
// images per patient (group).
inline std::string xray_manifest() {
  std::ostringstream out;
  out << "item_id,group_id,supergroup_id,label\n";
  int item = 0;
  for (int d = 0; d < 4; ++d)
    for (const char* label : {"cardiomegaly", "no finding"})
      for (int i = 0; i < 620; ++i, ++item)
        out << "img" << item << ",pat" << item / 2 << ",dataset" << d << "," << label << "\n";
  return out.str();
}

// Kidney OCT shape: 10 kidneys x 3 classes x 600 images, 100 images per
// volume (group).
inline std::string kidney_manifest() {
  std::ostringstream out;
  out << "item_id,group_id,supergroup_id,label\n";
  int item = 0;
  for (int kid = 0; kid < 10; ++kid)
    for (const char* label : {"cortex", "medulla", "pelvis"})
      for (int i = 0; i < 600; ++i, ++item)
        out << "oct" << item << ",vol" << item / 100 << ",kidney" << kid << "," << label << "\n";
  return out.str();
}

}  // namespace testsupport
