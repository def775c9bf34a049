// Copyright 2026 The shardckpt Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "shardckpt/error.hpp"
#include "shardckpt/load.hpp"
#include "shardckpt/training.hpp"

namespace shardckpt::cli {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string describe_sharding(const Sharding& s) {
  std::vector<std::string> axes, dims;
  for (const auto& a : s.mesh().axes()) {
    std::string name = a.name + "=" + std::to_string(a.size);
    if (s.mesh().replica_axis() == a.name) name += "*";
    axes.push_back(name);
  }
  for (const auto& d : s.spec().dims) dims.push_back(d.value_or("-"));
  return "mesh(" + join(axes, ",") + ") spec(" + join(dims, ",") + ") procs=" +
         std::to_string(s.mesh().process_count());
}

std::string describe_value(const Leaf& leaf) {
  if (const auto* t = std::get_if<Text>(&leaf)) return json(t->value).dump();
  return leaf_value_to_json(leaf).dump();
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

std::vector<std::int64_t> parse_counts(const std::string& text) {
  std::vector<std::int64_t> counts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      long long v = std::stoll(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument(part);
      counts.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_argument, "bad partition count '" + part + "' in '" + text + "'");
    }
  }
  if (counts.empty()) fail(ErrorCode::invalid_argument, "empty partition list");
  return counts;
}

/// Carries a stateful checkpointable's stored state through a reshard.
class StoredState : public StatefulCheckpointable {
 public:
  explicit StoredState(json state) : state_(std::move(state)) {}
  void save(StorageScope& scope) const override {
    if (!state_.is_null()) scope.put_json("state.json", state_);
  }
  void load(StorageScope& scope) override { state_ = scope.get_json("state.json"); }

 private:
  json state_;
};

/// JSON configuration files: top-level keys are global options, nested
/// objects hold the options of the subcommand they are named after.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json j = dump(app, default_also);
    return j.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError("config", e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config", "top level must be an object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, items);
    return items;
  }

 private:
  static json dump(const CLI::App* app, bool default_also) {
    json j = json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string& name = opt->get_lnames().front();
      if (opt->count() > 0) {
        auto results = opt->results();
        if (opt->get_expected_max() > 1 || results.size() > 1) {
          j[name] = results;
        } else if (!results.empty()) {
          j[name] = results.front();
        }
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    for (const CLI::App* sub : app->get_subcommands({})) {
      json s = dump(sub, default_also);
      if (!s.empty()) j[sub->get_name()] = s;
    }
    return j;
  }

  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& e : value) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

void fill_random(DenseArray& a, std::mt19937_64& rng) {
  auto bytes = a.mutable_bytes();
  if (a.dtype() == DType::boolean) {
    for (auto& b : bytes) b = static_cast<std::byte>(rng() & 1u);
    return;
  }
  std::size_t i = 0;
  while (i < bytes.size()) {
    std::uint64_t word = rng();
    for (int k = 0; k < 8 && i < bytes.size(); ++k, ++i) bytes[i] = static_cast<std::byte>((word >> (8 * k)) & 0xff);
  }
}

json per_actor_json(const CounterSnapshot& snap) {
  json j = json::object();
  for (const auto& [actor, c] : snap.per_actor)
    j[actor == kControllerActor ? std::string("controller") : std::to_string(actor)] = counters_to_json(c);
  return j;
}

}  // namespace

json counters_to_json(const IoCounters& c) {
  json ops = json::object();
  for (std::size_t k = 0; k < kOpKindCount; ++k) ops[std::string(op_kind_name(static_cast<OpKind>(k)))] = c.ops[k];
  return json{{"bytes_read", c.bytes_read},
              {"bytes_written", c.bytes_written},
              {"payload_bytes_read", c.payload_bytes_read},
              {"payload_bytes_written", c.payload_bytes_written},
              {"ops", ops}};
}

std::vector<ModelLeafSpec> parse_model_spec(const json& doc) {
  if (!doc.is_array()) fail(ErrorCode::parse, "model spec must be a JSON list");
  std::vector<ModelLeafSpec> out;
  try {
    for (const auto& e : doc) {
      ModelLeafSpec s;
      s.path = e.at("path").get<std::string>();
      s.shape = e.at("shape").get<Shape>();
      auto dt = parse_dtype(e.value("dtype", std::string("f32")));
      if (!dt) fail(ErrorCode::parse, "unknown dtype in model spec entry '" + s.path + "'");
      s.dtype = *dt;
      if (e.contains("partition")) {
        for (const auto& p : e.at("partition"))
          s.partition.push_back(p.is_null() ? std::nullopt : std::optional<std::string>(p.get<std::string>()));
      } else {
        s.partition.assign(s.shape.size(), std::nullopt);
      }
      if (s.partition.size() != s.shape.size())
        fail(ErrorCode::parse, "partition of '" + s.path + "' must have one entry per dimension");
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("model spec: ") + e.what());
  }
  return out;
}

std::vector<ModelLeafSpec> default_model_spec() {
  std::vector<ModelLeafSpec> spec;
  spec.push_back({"embed/table", {512, 64}, DType::f32, {"fsdp", std::nullopt}});
  for (int l = 0; l < 2; ++l) {
    const std::string p = "layers/" + std::to_string(l) + "/";
    spec.push_back({p + "attn/qkv", {64, 192}, DType::f32, {"fsdp", std::nullopt}});
    spec.push_back({p + "attn/out", {64, 64}, DType::f32, {"fsdp", std::nullopt}});
    spec.push_back({p + "mlp/up", {64, 256}, DType::f32, {std::nullopt, "fsdp"}});
    spec.push_back({p + "mlp/down", {256, 64}, DType::f32, {"fsdp", std::nullopt}});
    spec.push_back({p + "norm/scale", {64}, DType::f32, {std::nullopt}});
  }
  return spec;
}

std::vector<InspectRow> inspect_rows(StorageBackend& backend, const std::string& path) {
  CheckpointMetadata meta = read_metadata(backend, path);
  std::vector<InspectRow> rows;
  for (const auto& d : meta.checkpointables) {
    if (d.handler != kTreeHandler) {
      rows.push_back({d.name, "", d.handler, "", "", "", "", "", ""});
      continue;
    }
    const TreeMetadata& tm = meta.trees.at(d.name);
    for_each_leaf(tm.structure, [&](const std::string& p, const AbstractLeaf& leaf) {
      InspectRow r;
      r.item = d.name;
      r.path = p.empty() ? "." : p;
      r.kind = std::string(leaf_kind_name(leaf.kind));
      r.dtype = leaf.dtype ? std::string(dtype_name(*leaf.dtype)) : "";
      if (leaf.kind == LeafKind::dense_array) {
        r.shape = to_string(leaf.shape.value_or(Shape{}));
        if (leaf.sharding) r.sharding = describe_sharding(*leaf.sharding);
        const auto& m = meta.index.arrays.at(p.empty() ? d.name : d.name + "/" + p).meta;
        r.write_chunk = to_string(m.write_chunk);
        r.read_chunk = to_string(m.read_chunk);
      } else if (auto it = tm.inline_leaves.find(p); it != tm.inline_leaves.end()) {
        r.value = describe_value(it->second);
      }
      rows.push_back(std::move(r));
    });
  }
  return rows;
}

void print_inspect(const std::vector<InspectRow>& rows, std::ostream& out) {
  const std::vector<std::string> header{"ITEM", "PATH", "KIND", "SHAPE", "DTYPE", "WRITE_CHUNK", "READ_CHUNK",
                                        "SHARDING / VALUE"};
  std::vector<std::vector<std::string>> table{header};
  for (const auto& r : rows)
    table.push_back({r.item, r.path, r.kind, r.shape, r.dtype, r.write_chunk, r.read_chunk,
                     r.sharding.empty() ? r.value : r.sharding});
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << row[i];
      if (i + 1 < row.size()) out << std::string(width[i] - row[i].size() + 2, ' ');
    }
    out << "\n";
  }
}

std::vector<std::string> validate_checkpoint(StorageBackend& backend, const std::string& path) {
  if (!is_finalized(backend, path)) {
    if (!backend.exists(path)) fail(ErrorCode::not_found, "nothing at " + path);
    return {"checkpoint at " + path + " is not finalized"};
  }
  std::vector<std::string> problems;
  CheckpointMetadata meta;
  try {
    meta = read_metadata(backend, path);
  } catch (const Error& e) {
    return {e.what()};
  }
  try {
    MergedIndex remerged = merge_process_indices(backend, path, meta.process_count);
    if (remerged.to_json() != meta.index.to_json())
      problems.push_back("merged index does not match the per-process metadata");
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  std::set<std::string> leaves;
  for (const auto& [name, tm] : meta.trees)
    for_each_leaf(tm.structure, [&](const std::string& p, const AbstractLeaf& leaf) {
      if (leaf.kind == LeafKind::dense_array) leaves.insert(p.empty() ? name : name + "/" + p);
    });
  for (const auto& [leaf, idx] : meta.index.arrays)
    if (!leaves.count(leaf)) problems.push_back("merged index names unknown array " + leaf);
  for (auto& p : verify_chunks(backend, path, meta.index)) problems.push_back(std::move(p));
  for (const auto& d : meta.checkpointables)
    if (d.handler == kJsonHandler && !backend.exists(join_key(join_key(path, d.name), "data.json")))
      problems.push_back("document " + d.name + " has no data.json");
  return problems;
}

Sharding partition_sharding(const Shape& shape, const std::vector<std::int64_t>& counts, int processes) {
  if (counts.size() != shape.size())
    fail(ErrorCode::invalid_argument, "partition counts " + to_string(Shape(counts)) + " do not match rank of " +
                                          to_string(shape));
  if (processes < 1) fail(ErrorCode::invalid_argument, "process count must be at least 1");
  std::vector<MeshAxis> axes;
  PartitionSpec spec;
  std::int64_t devices = 1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 1) {
      axes.push_back({"d" + std::to_string(i), counts[i]});
      spec.dims.emplace_back("d" + std::to_string(i));
      devices *= counts[i];
    } else {
      spec.dims.emplace_back(std::nullopt);
    }
  }
  std::optional<std::string> replica;
  if (devices % processes != 0) {
    if (processes % devices != 0)
      fail(ErrorCode::invalid_argument, std::to_string(devices) + " partitions cannot be spread over " +
                                            std::to_string(processes) + " processes");
    axes.push_back({"r", processes / devices});
    replica = "r";
  } else if (axes.empty()) {
    axes.push_back({"r", 1});
    replica = "r";
  }
  return Sharding(Mesh::uniform(std::move(axes), processes, replica), std::move(spec), shape);
}

void reshard(const std::shared_ptr<StorageBackend>& backend, const std::string& src, const std::string& dst,
             const ReshardOptions& options) {
  std::optional<std::vector<std::int64_t>> default_counts;
  std::map<std::string, std::vector<std::int64_t>> leaf_counts;
  for (const auto& p : options.partitions) {
    auto eq = p.find('=');
    if (eq == std::string::npos) {
      default_counts = parse_counts(p);
    } else {
      leaf_counts[p.substr(0, eq)] = parse_counts(p.substr(eq + 1));
    }
  }
  CheckpointMetadata meta = read_metadata(*backend, src);
  SimulatedRuntime rt(backend, make_runtime_options(options.processes, options.runtime));

  AbstractCheckpointables abstract;
  for (const auto& d : meta.checkpointables) {
    if (d.handler != kTreeHandler) {
      abstract.emplace(d.name, AbstractDocument{});
      continue;
    }
    abstract.emplace(d.name, map_leaves(meta.trees.at(d.name).structure, [&](const std::string& p, const AbstractLeaf& l) {
      AbstractLeaf out = l;
      if (l.kind != LeafKind::dense_array) return out;
      const std::string full = p.empty() ? d.name : d.name + "/" + p;
      const Shape& shape = *l.shape;
      if (auto it = leaf_counts.find(full); it != leaf_counts.end()) {
        out.sharding = partition_sharding(shape, it->second, options.processes);
      } else if (default_counts && default_counts->size() == shape.size()) {
        out.sharding = partition_sharding(shape, *default_counts, options.processes);
      } else {
        out.sharding = default_sharding(shape, options.processes);
      }
      return out;
    }));
  }
  for (const auto& [leaf, counts] : leaf_counts) {
    bool found = meta.index.arrays.count(leaf) > 0;
    if (!found) fail(ErrorCode::invalid_argument, "no array leaf " + leaf + " in " + src);
  }

  LoadResult loaded = load(rt, src, &abstract);
  Checkpointables items;
  for (auto& [name, value] : loaded.items) {
    const CheckpointableDescriptor* d = meta.descriptor(name);
    if (d && d->handler == kStatefulHandler) {
      items.emplace(name, std::make_shared<StoredState>(std::get<Document>(value).value));
    } else {
      items.emplace(name, std::move(value));
    }
  }
  SaveOptions so;
  so.layout = options.layout;
  so.subchunk_target_bytes = options.subchunk_target_bytes;
  so.replica_parallel = options.replica_parallel;
  so.async = !options.sync;
  save(rt, dst, items, so).wait();
}

CrashPoint parse_crash_point(const std::string& text) {
  auto colon = text.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size())
    fail(ErrorCode::invalid_argument, "crash point '" + text + "' must look like <process>:<label>");
  CrashPoint c;
  try {
    std::size_t used = 0;
    c.process = std::stoi(text.substr(0, colon), &used);
    if (used != colon || c.process < 0) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    fail(ErrorCode::invalid_argument, "bad process index in crash point '" + text + "'");
  }
  c.at = text.substr(colon + 1);
  return c;
}

RuntimeOptions make_runtime_options(int processes, const RuntimeFlags& flags) {
  RuntimeOptions ro;
  ro.process_count = processes;
  ro.mode = flags.mode;
  ro.scheduler_seed = flags.scheduler_seed;
  ro.barrier_timeout = std::chrono::milliseconds(flags.barrier_timeout_ms);
  for (const auto& c : flags.crash) ro.crash_schedule.push_back(parse_crash_point(c));
  return ro;
}

LoadReport load_command(const std::shared_ptr<StorageBackend>& backend, const std::string& path,
                        const LoadCommandOptions& options) {
  if (!options.only.empty() && !options.partial)
    fail(ErrorCode::invalid_argument, "--only selects a subset and needs --partial");
  SimulatedRuntime rt(backend, make_runtime_options(options.processes, options.runtime));
  LoadOptions lo;
  lo.mode = options.partial ? LoadMode::partial : LoadMode::strict;
  lo.layout = options.layout;
  lo.broadcast = options.broadcast;

  std::optional<AbstractCheckpointables> abstract;
  if (!options.only.empty()) {
    auto selected = [&](const std::string& full) {
      return std::any_of(options.only.begin(), options.only.end(), [&](const std::string& p) {
        return full == p || full.rfind(p.back() == '/' ? p : p + "/", 0) == 0;
      });
    };
    AbstractCheckpointables all = abstract_checkpointables(read_metadata(*backend, path));
    abstract.emplace();
    for (auto& [name, value] : all) {
      if (const auto* tree = std::get_if<AbstractTree>(&value)) {
        std::vector<std::pair<std::string, AbstractLeaf>> keep;
        for (auto& [p, leaf] : flatten(*tree))
          if (selected(p.empty() ? name : name + "/" + p)) keep.emplace_back(p, leaf);
        if (!keep.empty()) abstract->emplace(name, tree_from_paths<AbstractLeaf>(keep));
      } else if (selected(name)) {
        abstract->emplace(name, value);
      }
    }
    if (abstract->empty()) fail(ErrorCode::invalid_argument, "--only matched nothing in " + path);
  }

  const CounterSnapshot before = backend->counters();
  LoadResult r = load(rt, path, abstract ? &*abstract : nullptr, lo);
  LoadReport report;
  report.counters = backend->counters().total - before.total;
  report.total = r.total;
  for (const auto& [name, item] : r.items) {
    if (const auto* t = std::get_if<TreeItem>(&item)) {
      for_each_leaf(t->tree, [&](const std::string& p, const Leaf& leaf) {
        LoadedLeaf row;
        row.path = p.empty() ? name : name + "/" + p;
        row.kind = std::string(leaf_kind_name(leaf_kind(leaf)));
        if (const auto* a = std::get_if<DenseArray>(&leaf)) {
          row.dtype = std::string(dtype_name(a->dtype()));
          row.shape = to_string(a->shape());
          std::uint64_t h = 1469598103934665603ull;
          for (std::byte b : a->bytes()) h = (h ^ static_cast<std::uint64_t>(b)) * 1099511628211ull;
          std::ostringstream hex;
          hex << std::hex << std::setw(16) << std::setfill('0') << h;
          row.digest = hex.str();
        } else if (leaf_kind(leaf) != LeafKind::placeholder) {
          row.digest = describe_value(leaf);
        }
        report.leaves.push_back(std::move(row));
      });
    } else if (const auto* d = std::get_if<Document>(&item)) {
      report.leaves.push_back({name, "document", "", "", d->value.dump()});
    } else {
      report.leaves.push_back({name, "stateful", "", "", ""});
    }
  }
  return report;
}

void print_load_report(const LoadReport& report, std::ostream& out) {
  std::size_t w = 4;
  for (const auto& l : report.leaves) w = std::max(w, l.path.size());
  for (const auto& l : report.leaves)
    out << std::left << std::setw(static_cast<int>(w + 2)) << l.path << std::setw(13) << l.kind << std::setw(6)
        << l.dtype << std::setw(16) << l.shape << l.digest << "\n";
  out << "bytes_requested=" << report.total.bytes_requested << " bytes_loaded=" << report.total.bytes_loaded
      << " payload_bytes_read=" << report.counters.payload_bytes_read
      << " bytes_written=" << report.counters.bytes_written << "\n";
}

json run_bench(const std::shared_ptr<StorageBackend>& backend, const BenchOptions& options) {
  if (options.processes < 1 || options.replicas < 1)
    fail(ErrorCode::invalid_argument, "processes and replicas must be at least 1");
  for (const auto& s : options.strategies)
    if (s != "single-slice" && s != "replica-parallel") fail(ErrorCode::invalid_argument, "unknown strategy " + s);
  for (const auto& s : options.load_strategies)
    if (s != "direct" && s != "broadcast") fail(ErrorCode::invalid_argument, "unknown load strategy " + s);
  const int total_processes = options.processes * options.replicas;
  Mesh mesh = Mesh::uniform({{"replica", options.replicas}, {"fsdp", options.processes}}, total_processes, "replica");

  std::mt19937_64 rng(options.seed);
  std::vector<std::pair<std::string, Leaf>> leaves;
  ShardingMap shardings;
  std::uint64_t model_bytes = 0;
  for (const auto& spec : options.model) {
    DenseArray a(spec.dtype, spec.shape);
    fill_random(a, rng);
    model_bytes += a.byte_size();
    shardings.emplace(spec.path, Sharding(mesh, PartitionSpec{spec.partition}, spec.shape));
    leaves.emplace_back(spec.path, std::move(a));
  }
  CheckpointTree tree = tree_from_paths<Leaf>(leaves);
  Checkpointables items;
  items.emplace("model", TreeItem{tree, shardings});
  AbstractCheckpointables abstract;
  abstract.emplace("model", abstract_of(tree, shardings));

  RuntimeFlags flags = options.runtime;
  if (!flags.scheduler_seed) flags.scheduler_seed = options.seed;
  SimulatedRuntime rt(backend, make_runtime_options(total_processes, flags));

  json report;
  report["config"] = {{"processes_per_replica", options.processes},
                      {"mode", std::string(controller_mode_name(flags.mode))},
                      {"sync", options.sync},
                      {"replicas", options.replicas},
                      {"total_processes", total_processes},
                      {"strategies", options.strategies},
                      {"load_strategies", options.load_strategies},
                      {"seed", options.seed},
                      {"layout", std::string(layout_name(options.layout))},
                      {"subchunk_target_bytes", options.subchunk_target_bytes ? json(*options.subchunk_target_bytes)
                                                                               : json(nullptr)},
                      {"leaves", options.model.size()},
                      {"model_bytes", model_bytes}};
  report["save"] = json::array();
  report["load"] = json::array();

  std::map<std::string, std::uint64_t> max_written;
  std::map<std::string, std::uint64_t> read_by_load;
  for (const auto& strategy : options.strategies) {
    const std::string path = options.path + "/" + strategy;
    if (backend->exists(path)) backend->remove(path);
    SaveOptions so;
    so.layout = options.layout;
    so.subchunk_target_bytes = options.subchunk_target_bytes;
    so.replica_parallel = strategy == "replica-parallel";
    so.async = !options.sync;
    backend->reset_counters();
    auto t0 = std::chrono::steady_clock::now();
    save(rt, path, items, so).wait();
    const double wall = elapsed_ms(t0);
    CounterSnapshot snap = backend->counters();
    std::vector<std::uint64_t> per_process(static_cast<std::size_t>(total_processes), 0);
    for (int p = 0; p < total_processes; ++p) per_process[static_cast<std::size_t>(p)] = snap.actor(p).payload_bytes_written;
    const auto mx = *std::max_element(per_process.begin(), per_process.end());
    max_written[strategy] = mx;
    report["save"].push_back({{"strategy", strategy},
                              {"wall_ms", wall},
                              {"counters", counters_to_json(snap.total)},
                              {"per_actor", per_actor_json(snap)},
                              {"payload_written", {{"total", snap.total.payload_bytes_written},
                                                   {"max_per_process", mx},
                                                   {"min_per_process", *std::min_element(per_process.begin(),
                                                                                         per_process.end())},
                                                   {"per_process", per_process}}}});

    for (const auto& ls : options.load_strategies) {
      LoadOptions lo;
      lo.broadcast = ls == "broadcast";
      backend->reset_counters();
      auto t1 = std::chrono::steady_clock::now();
      LoadResult r = load(rt, path, &abstract, lo);
      const double lwall = elapsed_ms(t1);
      CounterSnapshot ls_snap = backend->counters();
      std::vector<std::uint64_t> read_pp(static_cast<std::size_t>(total_processes), 0);
      for (int p = 0; p < total_processes; ++p) read_pp[static_cast<std::size_t>(p)] = ls_snap.actor(p).payload_bytes_read;
      const bool equal = std::get<TreeItem>(r.items.at("model")).tree == tree;
      if (strategy == options.strategies.front()) read_by_load[ls] = ls_snap.total.payload_bytes_read;
      report["load"].push_back({{"save_strategy", strategy},
                                {"strategy", ls},
                                {"wall_ms", lwall},
                                {"counters", counters_to_json(ls_snap.total)},
                                {"per_actor", per_actor_json(ls_snap)},
                                {"payload_read", {{"total", ls_snap.total.payload_bytes_read}, {"per_process", read_pp}}},
                                {"bytes_requested", r.total.bytes_requested},
                                {"bytes_loaded", r.total.bytes_loaded},
                                {"equal", equal}});
    }
  }
  json cmp = json::object();
  if (max_written.count("single-slice") && max_written.count("replica-parallel") && max_written["single-slice"] > 0)
    cmp["write_max_per_process_ratio"] =
        static_cast<double>(max_written["replica-parallel"]) / static_cast<double>(max_written["single-slice"]);
  if (read_by_load.count("direct") && read_by_load.count("broadcast") && read_by_load["direct"] > 0)
    cmp["payload_read_ratio"] =
        static_cast<double>(read_by_load["broadcast"]) / static_cast<double>(read_by_load["direct"]);
  report["comparisons"] = cmp;
  return report;
}

void print_bench_table(const json& report, std::ostream& out) {
  auto u = [](const json& v) { return v.get<std::uint64_t>(); };
  const auto& cfg = report.at("config");
  out << "processes/replica=" << u(cfg.at("processes_per_replica")) << " replicas=" << u(cfg.at("replicas"))
      << " seed=" << u(cfg.at("seed")) << " layout=" << cfg.at("layout").get<std::string>()
      << " model_bytes=" << u(cfg.at("model_bytes")) << "\n\n";
  out << std::left << std::setw(18) << "SAVE" << std::right << std::setw(12) << "wall_ms" << std::setw(16)
      << "bytes_written" << std::setw(16) << "payload_total" << std::setw(16) << "max/process" << std::setw(16)
      << "min/process" << std::setw(8) << "puts" << "\n";
  for (const auto& s : report.at("save")) {
    const auto& pw = s.at("payload_written");
    out << std::left << std::setw(18) << s.at("strategy").get<std::string>() << std::right << std::setw(12)
        << std::fixed << std::setprecision(1) << s.at("wall_ms").get<double>() << std::setw(16)
        << u(s.at("counters").at("bytes_written")) << std::setw(16) << u(pw.at("total")) << std::setw(16)
        << u(pw.at("max_per_process")) << std::setw(16) << u(pw.at("min_per_process")) << std::setw(8)
        << u(s.at("counters").at("ops").at("put")) << "\n";
  }
  out << "\n"
      << std::left << std::setw(18) << "LOAD" << std::setw(18) << "after" << std::right << std::setw(12) << "wall_ms"
      << std::setw(16) << "bytes_read" << std::setw(16) << "payload_read" << std::setw(8) << "equal" << "\n";
  for (const auto& l : report.at("load")) {
    out << std::left << std::setw(18) << l.at("strategy").get<std::string>() << std::setw(18)
        << l.at("save_strategy").get<std::string>() << std::right << std::setw(12) << std::fixed
        << std::setprecision(1) << l.at("wall_ms").get<double>() << std::setw(16) << u(l.at("counters").at("bytes_read"))
        << std::setw(16) << u(l.at("payload_read").at("total")) << std::setw(8)
        << (l.at("equal").get<bool>() ? "yes" : "NO") << "\n";
  }
  const auto& cmp = report.at("comparisons");
  if (!cmp.empty()) out << "\n";
  if (cmp.contains("write_max_per_process_ratio"))
    out << "replica-parallel / single-slice max per-process payload written: " << std::setprecision(4)
        << cmp.at("write_max_per_process_ratio").get<double>() << "\n";
  if (cmp.contains("payload_read_ratio"))
    out << "broadcast / direct payload read: " << std::setprecision(4) << cmp.at("payload_read_ratio").get<double>()
        << "\n";
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Inspect, validate, reshard, benchmark, and clean up sharded checkpoints.", "shardckpt"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with option values");
  app.require_subcommand(1);
  std::string backend_spec = "fs:.";
  app.add_option("--backend", backend_spec, "Storage backend: fs:<dir> or mem")->capture_default_str();

  struct RuntimeArgs {
    RuntimeFlags flags;
    std::string mode = "multi";
  };
  auto add_runtime = [](CLI::App* cmd, RuntimeArgs& args) {
    cmd->add_option("--mode", args.mode, "multi (leader + barriers) or single (controller + workers)")
        ->check(CLI::IsMember({"multi", "single"}));
    cmd->add_option("--scheduler-seed", args.flags.scheduler_seed, "Seed for randomized interleavings");
    cmd->add_option("--barrier-timeout-ms", args.flags.barrier_timeout_ms, "Barrier timeout in milliseconds")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--crash", args.flags.crash, "Inject a crash: <process>:<barrier or task label>");
  };
  auto resolve_runtime = [](RuntimeArgs& args) {
    args.flags.mode = args.mode == "single" ? ControllerMode::single_controller : ControllerMode::multi_controller;
    for (const auto& c : args.flags.crash) parse_crash_point(c);
    return args.flags;
  };

  auto* inspect = app.add_subcommand("inspect", "List leaves, shapes, dtypes, shardings, and chunk shapes");
  std::string inspect_path;
  bool inspect_json = false;
  inspect->add_option("path", inspect_path, "Checkpoint path")->required();
  inspect->add_flag("--json", inspect_json, "Emit JSON rows");

  auto* validate = app.add_subcommand("validate", "Check a checkpoint for missing or inconsistent data");
  std::string validate_path;
  validate->add_option("path", validate_path, "Checkpoint path")->required();

  auto* reshard_cmd = app.add_subcommand("reshard", "Load with a new partitioning and save a copy");
  std::string src, dst, reshard_layout = "per-leaf", subchunk = "off";
  ReshardOptions ropts;
  reshard_cmd->add_option("src", src, "Source checkpoint")->required();
  reshard_cmd->add_option("dst", dst, "Destination checkpoint")->required();
  reshard_cmd->add_option("--partitions", ropts.partitions, "[leaf=]c0,c1,... partition counts per dimension");
  reshard_cmd->add_option("--processes", ropts.processes, "Process count")->check(CLI::PositiveNumber);
  reshard_cmd->add_option("--layout", reshard_layout, "per-leaf or aggregated")
      ->check(CLI::IsMember({"per-leaf", "aggregated"}));
  reshard_cmd->add_option("--subchunk-target-bytes", subchunk, "Read-subchunk target in bytes, or off");
  reshard_cmd->add_flag("--replica-parallel", ropts.replica_parallel, "Spread replicated writes over replicas");
  reshard_cmd->add_flag("--sync", ropts.sync, "Write synchronously instead of in the background");
  RuntimeArgs reshard_rt;
  add_runtime(reshard_cmd, reshard_rt);

  auto* load_cmd = app.add_subcommand("load", "Load a checkpoint or safetensors file and print leaf digests");
  std::string load_path, load_layout = "auto";
  LoadCommandOptions lopts;
  bool load_json = false;
  load_cmd->add_option("path", load_path, "Checkpoint directory or safetensors file")->required();
  load_cmd->add_option("--layout", load_layout, "auto, native, or safetensors")
      ->check(CLI::IsMember({"auto", "native", "safetensors"}));
  load_cmd->add_option("--processes", lopts.processes, "Process count")->check(CLI::PositiveNumber);
  load_cmd->add_flag("--partial", lopts.partial, "Allow loading a subset of the checkpoint");
  load_cmd->add_option("--only", lopts.only, "Leaf-path prefix to load (with --partial); repeatable");
  load_cmd->add_flag("--broadcast", lopts.broadcast, "Read on replica group 0 and broadcast to the others");
  load_cmd->add_flag("--json", load_json, "Emit JSON");
  RuntimeArgs load_rt;
  add_runtime(load_cmd, load_rt);

  auto* bench = app.add_subcommand("bench", "Seeded save/load benchmark on the simulated runtime");
  std::string model_spec, strategy = "both", load_strategy = "both", bench_layout = "per-leaf",
                          bench_subchunk = "off", json_out, format = "table";
  BenchOptions bopts;
  bench->add_option("--model-spec", model_spec, "JSON list of {path, shape, dtype, partition}");
  bench->add_option("--processes", bopts.processes, "Processes per replica group")->check(CLI::PositiveNumber);
  bench->add_option("--replicas", bopts.replicas, "Replica groups")->check(CLI::PositiveNumber);
  bench->add_option("--strategy", strategy, "single-slice, replica-parallel, or both")
      ->check(CLI::IsMember({"single-slice", "replica-parallel", "both"}));
  bench->add_option("--load-strategy", load_strategy, "direct, broadcast, or both")
      ->check(CLI::IsMember({"direct", "broadcast", "both"}));
  bench->add_option("--seed", bopts.seed, "Seed for data and scheduling");
  bench->add_option("--layout", bench_layout, "per-leaf or aggregated")
      ->check(CLI::IsMember({"per-leaf", "aggregated"}));
  bench->add_option("--subchunk-target-bytes", bench_subchunk, "Read-subchunk target in bytes, or off");
  bench->add_option("--json-out", json_out, "Also write the JSON report to this file");
  bench->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));
  bench->add_flag("--sync", bopts.sync, "Save synchronously instead of in the background");
  RuntimeArgs bench_rt;
  add_runtime(bench, bench_rt);

  auto* gc = app.add_subcommand("gc", "Apply the retention policy to a step root");
  std::string gc_root;
  RetentionPolicy policy;
  std::int64_t keep_period = 0;
  bool sweep = false;
  double min_age_seconds = 3600;
  gc->add_option("root", gc_root, "Directory holding step_<n> checkpoints")->required();
  gc->add_option("--keep-last", policy.keep_last, "Most recent steps to keep")->check(CLI::PositiveNumber);
  gc->add_option("--keep-period", keep_period, "Also keep steps divisible by this")->check(CLI::PositiveNumber);
  gc->add_flag("--sweep-tmp", sweep, "Remove leftovers of unfinished saves");
  gc->add_option("--min-age-seconds", min_age_seconds, "Minimum age of leftovers to sweep")
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  auto parse_subchunk = [](const std::string& s) -> std::optional<std::uint64_t> {
    if (s == "off") return std::nullopt;
    try {
      std::size_t used = 0;
      unsigned long long v = std::stoull(s, &used);
      if (used == s.size() && v > 0) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorCode::invalid_argument, "--subchunk-target-bytes takes a positive integer or off");
  };

  try {
    std::shared_ptr<StorageBackend> backend = make_backend(backend_spec);
    if (*inspect) {
      auto rows = inspect_rows(*backend, inspect_path);
      if (inspect_json) {
        json j = json::array();
        for (const auto& r : rows)
          j.push_back({{"item", r.item},
                       {"path", r.path},
                       {"kind", r.kind},
                       {"shape", r.shape},
                       {"dtype", r.dtype},
                       {"sharding", r.sharding},
                       {"write_chunk", r.write_chunk},
                       {"read_chunk", r.read_chunk},
                       {"value", r.value}});
        out << j.dump(2) << "\n";
      } else {
        print_inspect(rows, out);
      }
      return kExitOk;
    }
    if (*validate) {
      auto problems = validate_checkpoint(*backend, validate_path);
      if (problems.empty()) {
        out << "ok\n";
        return kExitOk;
      }
      for (const auto& p : problems) out << "problem: " << p << "\n";
      return kExitFailure;
    }
    if (*reshard_cmd) {
      ropts.layout = parse_layout(reshard_layout);
      ropts.subchunk_target_bytes = parse_subchunk(subchunk);
      ropts.runtime = resolve_runtime(reshard_rt);
      reshard(backend, src, dst, ropts);
      out << "resharded " << src << " -> " << dst << "\n";
      return kExitOk;
    }
    if (*load_cmd) {
      lopts.layout = parse_load_layout(load_layout);
      lopts.runtime = resolve_runtime(load_rt);
      LoadReport report = load_command(backend, load_path, lopts);
      if (load_json) {
        json leaves = json::array();
        for (const auto& l : report.leaves)
          leaves.push_back(
              {{"path", l.path}, {"kind", l.kind}, {"dtype", l.dtype}, {"shape", l.shape}, {"digest", l.digest}});
        out << json{{"leaves", leaves},
                    {"bytes_requested", report.total.bytes_requested},
                    {"bytes_loaded", report.total.bytes_loaded},
                    {"counters", counters_to_json(report.counters)}}
                   .dump(2)
            << "\n";
      } else {
        print_load_report(report, out);
      }
      return kExitOk;
    }
    if (*bench) {
      if (model_spec.empty()) {
        bopts.model = default_model_spec();
      } else {
        std::ifstream in(model_spec);
        if (!in) fail(ErrorCode::not_found, "cannot open model spec " + model_spec);
        json doc;
        try {
          in >> doc;
        } catch (const json::exception& e) {
          fail(ErrorCode::parse, model_spec + ": " + e.what());
        }
        bopts.model = parse_model_spec(doc);
      }
      bopts.strategies = strategy == "both" ? std::vector<std::string>{"single-slice", "replica-parallel"}
                                            : std::vector<std::string>{strategy};
      bopts.load_strategies = load_strategy == "both" ? std::vector<std::string>{"direct", "broadcast"}
                                                      : std::vector<std::string>{load_strategy};
      bopts.layout = parse_layout(bench_layout);
      bopts.subchunk_target_bytes = parse_subchunk(bench_subchunk);
      bopts.runtime = resolve_runtime(bench_rt);
      json report = run_bench(backend, bopts);
      if (!json_out.empty()) {
        std::ofstream f(json_out);
        if (!f) fail(ErrorCode::storage, "cannot write " + json_out);
        f << report.dump(2) << "\n";
      }
      if (format == "json") {
        out << report.dump(2) << "\n";
      } else {
        print_bench_table(report, out);
      }
      return kExitOk;
    }
    if (*gc) {
      if (keep_period > 0) policy.keep_period = keep_period;
      SimulatedRuntime rt(backend);
      CheckpointerOptions co;
      co.retention = policy;
      Checkpointer ckpt(rt, gc_root, co);
      for (Step s : ckpt.garbage_collect()) out << "deleted " << step_dir_name(s) << "\n";
      if (sweep) {
        auto age = std::chrono::milliseconds(static_cast<std::int64_t>(min_age_seconds * 1000));
        for (const auto& name : ckpt.sweep_tmp(age)) out << "swept " << name << "\n";
      }
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::not_found ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace shardckpt::cli
