#include "stylesplit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stylesplit {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "stylesplit-checkpoint";

std::uint64_t to_little(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
  return r;
}

struct ArrayRecord {
  std::size_t offset = 0, count = 0;
  Shape shape;
};

class BlobWriter {
 public:
  void add(const std::string& name, const Shape& shape, std::span<const double> values) {
    if (records_.count(name)) throw CheckpointError("duplicate array name " + name);
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    if (count != values.size()) throw CheckpointError("array " + name + " size does not match its shape");
    records_[name] = {data_.size(), count, shape};
    order_.push_back(name);
    data_.insert(data_.end(), values.begin(), values.end());
  }
  void add(const std::string& name, const Tensor& t) { add(name, t.shape(), t.data()); }

  void write_manifest(std::ostream& out) const {
    for (const auto& name : order_) {
      const auto& r = records_.at(name);
      out << "array " << name << ' ' << r.offset << ' ' << r.count << ' ' << r.shape.size();
      for (auto d : r.shape) out << ' ' << d;
      out << '\n';
    }
  }

  void write_blob(std::ostream& out) const {
    std::vector<std::uint64_t> raw(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) raw[i] = to_little(std::bit_cast<std::uint64_t>(data_[i]));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 8));
  }

 private:
  std::map<std::string, ArrayRecord> records_;
  std::vector<std::string> order_;
  std::vector<double> data_;
};

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body, bool binary) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    body(out);
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string opt_prefix(const char* opt, const char* moment, const std::string& name) {
  return std::string(opt) + "." + moment + "/" + name;
}

void add_optimizer(BlobWriter& w, const char* tag, const Adam& opt) {
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.add(opt_prefix(tag, "m", params[i].name), params[i].tensor.shape(), opt.first_moments()[i]);
    w.add(opt_prefix(tag, "v", params[i].name), params[i].tensor.shape(), opt.second_moments()[i]);
  }
}

class BlobReader {
 public:
  BlobReader(std::map<std::string, ArrayRecord> records, std::vector<double> data)
      : records_(std::move(records)), data_(std::move(data)) {}

  const ArrayRecord& record(const std::string& name) const {
    auto it = records_.find(name);
    if (it == records_.end()) throw CheckpointError("checkpoint lacks array " + name);
    return it->second;
  }

  std::span<const double> values(const std::string& name, const Shape& expected) const {
    const auto& r = record(name);
    if (r.shape != expected) throw CheckpointError("array " + name + " has an unexpected shape");
    return {data_.data() + r.offset, r.count};
  }

  Tensor tensor(const std::string& name) const {
    const auto& r = record(name);
    return Tensor(r.shape, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r.offset),
                                               data_.begin() + static_cast<std::ptrdiff_t>(r.offset + r.count)));
  }

  void into(const std::string& name, const Tensor& dst) const {
    auto src = values(name, dst.shape());
    Tensor t = dst;  // shares storage
    auto out = t.mutable_data();
    std::copy(src.begin(), src.end(), out.begin());
  }

 private:
  std::map<std::string, ArrayRecord> records_;
  std::vector<double> data_;
};

void read_optimizer(const BlobReader& r, const char* tag, Adam& opt) {
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = r.values(opt_prefix(tag, "m", params[i].name), params[i].tensor.shape());
    auto v = r.values(opt_prefix(tag, "v", params[i].name), params[i].tensor.shape());
    opt.first_moments()[i].assign(m.begin(), m.end());
    opt.second_moments()[i].assign(v.begin(), v.end());
  }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const RunConfig& cfg, const TrainState& st) {
  fs::create_directories(dir);
  BlobWriter w;
  for (const auto& p : st.all_params()) w.add("param/" + p.name, p.tensor);
  add_optimizer(w, "opt_g", st.opt_g);
  add_optimizer(w, "opt_d", st.opt_d);

  std::vector<double> q;
  for (const auto& row : st.queue.rows()) q.insert(q.end(), row.begin(), row.end());
  w.add("queue", {st.queue.size(), st.queue.dim()}, q);

  const auto& bundles = st.bank.bundles();
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    std::string pre = "bank/" + std::to_string(i) + "/";
    for (std::size_t s = 0; s < kScales; ++s) {
      w.add(pre + "map" + std::to_string(s + 1), bundles[i].maps[s]);
      w.add(pre + "token" + std::to_string(s + 1), bundles[i].tokens[s]);
    }
    w.add(pre + "global", bundles[i].global);
  }
  const auto& replay = st.bank.replay();
  for (std::size_t i = 0; i < replay.size(); ++i) {
    std::string pre = "replay/" + std::to_string(i) + "/";
    w.add(pre + "stylized", replay[i].stylized);
    w.add(pre + "source", replay[i].source);
  }

  write_file(dir / "config.json", [&](std::ostream& o) { o << run_config_to_json(cfg) << '\n'; }, false);
  write_file(dir / "arrays.bin", [&](std::ostream& o) { w.write_blob(o); }, true);
  write_file(
      dir / "manifest.txt",
      [&](std::ostream& o) {
        o << kMagic << ' ' << kCheckpointVersion << '\n';
        o << "step " << st.step << '\n';
        o << "opt_g_steps " << st.opt_g.steps() << '\n';
        o << "opt_d_steps " << st.opt_d.steps() << '\n';
        o << "bank " << bundles.size() << '\n';
        o << "replay " << replay.size() << '\n';
        o << "rng " << st.rng << '\n';
        w.write_manifest(o);
      },
      false);
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  std::ifstream man(dir / "manifest.txt");
  if (!man) throw CheckpointError("cannot open " + (dir / "manifest.txt").string());

  std::string magic;
  int version = 0;
  man >> magic >> version;
  if (magic != kMagic) throw CheckpointError("not a checkpoint manifest: " + dir.string());
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }

  std::size_t step = 0, g_steps = 0, d_steps = 0, n_bank = 0, n_replay = 0;
  Rng rng;
  std::map<std::string, ArrayRecord> records;
  std::size_t total = 0;
  std::string key;
  while (man >> key) {
    if (key == "step") {
      man >> step;
    } else if (key == "opt_g_steps") {
      man >> g_steps;
    } else if (key == "opt_d_steps") {
      man >> d_steps;
    } else if (key == "bank") {
      man >> n_bank;
    } else if (key == "replay") {
      man >> n_replay;
    } else if (key == "rng") {
      man >> rng;
    } else if (key == "array") {
      std::string name;
      ArrayRecord r;
      std::size_t rank = 0;
      man >> name >> r.offset >> r.count >> rank;
      r.shape.resize(rank);
      for (auto& d : r.shape) man >> d;
      total = std::max(total, r.offset + r.count);
      records[name] = std::move(r);
    } else {
      throw CheckpointError("unknown manifest entry '" + key + "'");
    }
    if (!man) throw CheckpointError("malformed manifest entry '" + key + "'");
  }

  std::ifstream blob(dir / "arrays.bin", std::ios::binary);
  if (!blob) throw CheckpointError("cannot open " + (dir / "arrays.bin").string());
  std::vector<std::uint64_t> raw(total);
  blob.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(total * 8));
  if (blob.gcount() != static_cast<std::streamsize>(total * 8)) throw CheckpointError("truncated arrays.bin");
  std::vector<double> data(total);
  for (std::size_t i = 0; i < total; ++i) data[i] = std::bit_cast<double>(to_little(raw[i]));
  BlobReader r(std::move(records), std::move(data));

  LoadedCheckpoint out{load_run_config((dir / "config.json").string()), {}};
  out.state = init_state(out.config.train, out.config.seed);
  TrainState& st = out.state;
  for (const auto& p : st.all_params()) r.into("param/" + p.name, p.tensor);
  read_optimizer(r, "opt_g", st.opt_g);
  read_optimizer(r, "opt_d", st.opt_d);
  st.opt_g.set_steps(g_steps);
  st.opt_d.set_steps(d_steps);

  const auto& qr = r.record("queue");
  if (qr.shape.size() != 2 || qr.shape[1] != st.queue.dim()) throw CheckpointError("queue width mismatch");
  auto qv = r.values("queue", qr.shape);
  std::deque<std::vector<double>> rows;
  for (std::size_t i = 0; i < qr.shape[0]; ++i) {
    rows.emplace_back(qv.begin() + static_cast<std::ptrdiff_t>(i * qr.shape[1]),
                      qv.begin() + static_cast<std::ptrdiff_t>((i + 1) * qr.shape[1]));
  }
  st.queue.restore(std::move(rows));

  std::deque<BankEntry> bundles;
  for (std::size_t i = 0; i < n_bank; ++i) {
    std::string pre = "bank/" + std::to_string(i) + "/";
    BankEntry e;
    for (std::size_t s = 0; s < kScales; ++s) {
      e.maps[s] = r.tensor(pre + "map" + std::to_string(s + 1));
      e.tokens[s] = r.tensor(pre + "token" + std::to_string(s + 1));
    }
    e.global = r.tensor(pre + "global");
    bundles.push_back(std::move(e));
  }
  std::deque<ReplayEntry> replay;
  for (std::size_t i = 0; i < n_replay; ++i) {
    std::string pre = "replay/" + std::to_string(i) + "/";
    replay.push_back({r.tensor(pre + "stylized"), r.tensor(pre + "source")});
  }
  st.bank.restore(std::move(bundles), std::move(replay));
  st.step = step;
  st.rng = rng;
  return out;
}

}  // namespace stylesplit
