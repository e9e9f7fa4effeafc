#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cisper/graph.hpp"

namespace testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("cisper-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
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

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline cisper::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
                                    double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  cisper::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Max relative error between analytic and central-difference gradients of
// `loss` w.r.t. every entry of every parameter. Relative error uses
// max(|a|, |n|, floor) as the denominator.
inline double max_grad_error(const std::vector<cisper::Parameter*>& params,
                             const std::function<double(bool backward)>& loss, double h = 1e-5,
                             double floor = 1e-6) {
  for (auto* p : params) p->zero_grad();
  loss(true);
  double worst = 0.0;
  for (auto* p : params) {
    const cisper::Matrix analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value.data()[i];
      p->value.data()[i] = orig + h;
      const double up = loss(false);
      p->value.data()[i] = orig - h;
      const double down = loss(false);
      p->value.data()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace testing
