#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "vpo/ports.hpp"
#include "vpo/serialization.hpp"
#include "vpo/sim.hpp"
#include "vpo/tasks.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("vpo-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }

 private:
  std::filesystem::path path_;
};

/// Judge driven by a callback over its own call counter. Calls arrive in
/// (a,b), (b,a) pairs from consistent_pairwise, so even calls see the
/// original order.
class ScriptedJudge final : public vpo::Judge {
 public:
  using Script = std::function<vpo::Side(int call, const vpo::ImageRef& first, const vpo::ImageRef& second)>;
  ScriptedJudge(std::string id, Script script) : id_(std::move(id)), script_(std::move(script)) {}
  vpo::Judgment judge(const vpo::CallContext&, std::string_view, const vpo::ImageRef& first,
                      const vpo::ImageRef& second) override {
    const int c = calls_++;
    return {script_(c, first, second), "scripted feedback " + std::to_string(c)};
  }
  std::string id() const override { return id_; }
  int calls() const { return calls_; }

 private:
  std::string id_;
  Script script_;
  int calls_ = 0;
};

/// Consistent vote for the first argument of the (a,b) query.
inline vpo::Side vote_a(int call) { return call % 2 == 0 ? vpo::Side::First : vpo::Side::Second; }
inline vpo::Side vote_b(int call) { return call % 2 == 0 ? vpo::Side::Second : vpo::Side::First; }

inline vpo::TaskSpec hotels() { return vpo::load_builtin_task(vpo::TaskId::Hotels); }

inline std::shared_ptr<vpo::sim::SimEnvironment> sim_env(std::uint64_t seed = 11,
                                                        const std::string& prior = hotels().base_prior) {
  return std::make_shared<vpo::sim::SimEnvironment>(vpo::sim::standard_environment(seed, prior));
}

inline vpo::ImageRef synth(const std::string& id, std::vector<double> pres, std::vector<int> ident = {1, 2, 3, 4}) {
  vpo::SynthImage s;
  s.identity = Eigen::Map<Eigen::VectorXi>(ident.data(), static_cast<Eigen::Index>(ident.size()));
  s.presentation = Eigen::Map<Eigen::VectorXd>(pres.data(), static_cast<Eigen::Index>(pres.size()));
  return vpo::make_original(id, s);
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace testing
