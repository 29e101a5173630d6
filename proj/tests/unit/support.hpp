#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

#include "sabm/event_log.hpp"
#include "sabm/provider.hpp"
#include "sabm/rng.hpp"
#include "sabm/runtime.hpp"

namespace testing {

/// Fresh directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sabm-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Small generator for property tests, independent of the engine's RunContext.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed ^ 0xD1B54A32D192ED03ULL) {}

  std::uint64_t u64() { return rng_.next_u64(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(sabm::to_below(u64(), static_cast<std::uint64_t>(hi - lo + 1))); }
  double real(double lo, double hi) { return lo + (hi - lo) * sabm::to_unit(u64()); }
  bool coin() { return (u64() >> 63) != 0; }
  template <typename T>
  const T& pick(const std::vector<T>& v) { return v[static_cast<std::size_t>(integer(0, static_cast<int>(v.size()) - 1))]; }
  std::string word(int max_len = 8) {
    static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABCXYZ.,!?0123456789{}";
    std::string s;
    const int n = integer(0, max_len);
    for (int i = 0; i < n; ++i) s += alphabet[static_cast<std::size_t>(integer(0, static_cast<int>(alphabet.size()) - 1))];
    return s;
  }

 private:
  sabm::CounterRng rng_;
};

/// Backend that answers from a fixed function and counts calls.
class FnBackend final : public sabm::Backend {
 public:
  explicit FnBackend(std::function<std::string(const sabm::ChatRequest&)> fn) : fn_(std::move(fn)) {}
  sabm::ChatResponse complete(const sabm::ChatRequest& r) override {
    ++calls;
    return {fn_(r), sabm::FinishReason::stop, std::nullopt};
  }
  std::string name() const override { return "fn"; }
  int calls = 0;

 private:
  std::function<std::string(const sabm::ChatRequest&)> fn_;
};

}  // namespace testing
