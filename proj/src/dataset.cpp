#include "onevl/dataset.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "onevl/rng.hpp"

namespace onevl {

namespace {

using ojson = nlohmann::ordered_json;

std::string frame_to_string(const Raster& r) {
  std::string s(r.cells.size(), '0');
  for (std::size_t i = 0; i < r.cells.size(); ++i) s[i] = static_cast<char>('0' + r.cells[i]);
  return s;
}

Raster frame_from_string(const std::string& s, int h, int w) {
  if (s.size() != static_cast<std::size_t>(h * w)) throw std::runtime_error("frame size mismatch in dataset record");
  Raster r{h, w, std::vector<std::uint8_t>(s.size())};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int v = s[i] - '0';
    if (v < 0 || v >= kNumCellClasses) throw std::runtime_error("bad cell class in dataset record");
    r.cells[i] = static_cast<std::uint8_t>(v);
  }
  return r;
}

}  // namespace

Dataset generate_dataset(std::size_t n, std::uint64_t seed, SplitRatio ratio, const RasterConfig& raster) {
  if (n < 10) throw std::invalid_argument("build_dataset: need at least 10 samples");
  if (ratio.train < 0 || ratio.val < 0 || ratio.test < 0 ||
      std::abs(ratio.train + ratio.val + ratio.test - 1.0) > 1e-9) {
    throw std::invalid_argument("build_dataset: split ratios must be non-negative and sum to 1");
  }
  // Per-scenario index lists, shuffled, then interleaved round-robin so every
  // prefix of the pooled order is stratified.
  std::array<std::vector<std::size_t>, 4> by_scenario;
  for (std::size_t i = 0; i < n; ++i) by_scenario[i % 4].push_back(i);
  Rng rng(mix_seed(seed, 0xDA7A));
  for (auto& v : by_scenario) rng.shuffle(v);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t k = 0; order.size() < n; ++k) {
    for (auto& v : by_scenario) {
      if (k < v.size()) order.push_back(v[k]);
    }
  }

  const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * ratio.train + 1e-9);
  const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * ratio.val + 1e-9);
  Dataset ds;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t i = order[j];
    Sample s = make_sample(mix_seed(seed, i), kAllScenarios[i % 4], raster);
    if (j < n_train) {
      ds.train.push_back(std::move(s));
    } else if (j < n_train + n_val) {
      ds.val.push_back(std::move(s));
    } else {
      ds.test.push_back(std::move(s));
    }
  }
  return ds;
}

Dataset build_dataset(std::size_t n, std::uint64_t seed, SplitRatio ratio, const RasterConfig& raster,
                      const std::filesystem::path& dir) {
  Dataset ds = generate_dataset(n, seed, ratio, raster);
  std::filesystem::create_directories(dir);
  write_samples(dir / "train.jsonl", ds.train);
  write_samples(dir / "val.jsonl", ds.val);
  write_samples(dir / "test.jsonl", ds.test);
  return ds;
}

std::string sample_to_json_line(const Sample& s) {
  ojson j;
  j["seed"] = s.seed;
  j["scenario"] = std::string(to_string(s.scenario));
  j["height"] = s.frame_now.height;
  j["width"] = s.frame_now.width;
  j["ego_state_text"] = s.ego_state_text;
  j["frame_now"] = frame_to_string(s.frame_now);
  j["frame_future"] = {frame_to_string(s.frame_future[0]), frame_to_string(s.frame_future[1])};
  ojson traj = ojson::array();
  for (const auto& w : s.trajectory) {
    traj.push_back(round_fixed(w.x));
    traj.push_back(round_fixed(w.y));
  }
  j["trajectory"] = std::move(traj);
  j["cot_text"] = s.cot_text;
  j["meta_action"] = std::string(to_string(s.meta_action));
  return j.dump();
}

Sample sample_from_json_line(const std::string& line) {
  const auto j = ojson::parse(line);
  Sample s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  const int h = j.at("height").get<int>();
  const int w = j.at("width").get<int>();
  s.ego_state_text = j.at("ego_state_text").get<std::string>();
  s.frame_now = frame_from_string(j.at("frame_now").get<std::string>(), h, w);
  const auto& ff = j.at("frame_future");
  if (ff.size() != 2) throw std::runtime_error("dataset record needs two future frames");
  s.frame_future[0] = frame_from_string(ff[0].get<std::string>(), h, w);
  s.frame_future[1] = frame_from_string(ff[1].get<std::string>(), h, w);
  const auto& traj = j.at("trajectory");
  if (traj.size() != 2 * kNumWaypoints) throw std::runtime_error("dataset record needs 16 trajectory values");
  for (std::size_t k = 0; k < kNumWaypoints; ++k) {
    s.trajectory[k] = {traj[2 * k].get<double>(), traj[2 * k + 1].get<double>()};
  }
  s.cot_text = j.at("cot_text").get<std::string>();
  s.meta_action = meta_action_from_string(j.at("meta_action").get<std::string>());
  return s;
}

void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) os << sample_to_json_line(s) << '\n';
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<Sample> read_samples(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<Sample> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(sample_from_json_line(line));
  }
  return out;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.train = read_samples(dir / "train.jsonl");
  ds.val = read_samples(dir / "val.jsonl");
  ds.test = read_samples(dir / "test.jsonl");
  return ds;
}

}  // namespace onevl
