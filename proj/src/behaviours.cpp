#include "hijack/behaviours.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace hijack {

namespace fs = std::filesystem;
using nlohmann::json;

InstructionSplits load_instruction_dataset(const std::string& path, const SplitSpec& spec) {
  std::ifstream in(path);
  if (!in) throw ConfigError("instruction dataset not found: " + path);
  std::vector<ChatContext> all;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (strip(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed JSON record: " +
                        e.what());
    }
    if (!rec.contains("instruction") || !rec["instruction"].is_string())
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": missing required key \"instruction\"");
    std::string text = rec["instruction"].get<std::string>();
    if (rec.contains("input") && rec["input"].is_string() &&
        !rec["input"].get<std::string>().empty())
      text += " " + rec["input"].get<std::string>();
    all.push_back(ChatContext{text, std::nullopt});
  }
  if (spec.val_n + spec.test_n > all.size())
    throw ConfigError("split sizes val_n+test_n=" + std::to_string(spec.val_n + spec.test_n) +
                      " exceed corpus size " + std::to_string(all.size()));

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);

  InstructionSplits out;
  auto take = [&](std::size_t from, std::size_t n, const std::string& tag) {
    ContextSet cs;
    cs.split = tag;
    cs.provenance = path + " seed=" + std::to_string(spec.seed);
    for (std::size_t i = from; i < from + n; ++i) cs.contexts.push_back(all[order[i]]);
    return cs;
  };
  out.val = take(0, spec.val_n, "val");
  out.test = take(spec.val_n, spec.test_n, "test");
  out.train = take(spec.val_n + spec.test_n, all.size() - spec.val_n - spec.test_n, "train");
  return out;
}

std::vector<HarmfulPair> load_harmful_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("harmful pairs file not found: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file, expected header");
  // minimal CSV: split on the first comma; quoted fields supported
  auto parse_row = [&](const std::string& row) -> std::pair<std::string, std::string> {
    if (!row.empty() && row[0] == '"') {
      std::size_t close = row.find("\",");
      if (close == std::string::npos)
        throw ConfigError(path + ": unterminated quoted field");
      return {row.substr(1, close - 1), row.substr(close + 2)};
    }
    std::size_t comma = row.find(',');
    if (comma == std::string::npos)
      throw ConfigError(path + ": expected two columns `goal,target`");
    return {row.substr(0, comma), row.substr(comma + 1)};
  };
  {
    auto [h1, h2] = parse_row(strip(line));
    if (strip(h1) != "goal" || strip(h2) != "target")
      throw ConfigError(path + ": expected header `goal,target`, got `" + line + "`");
  }
  std::vector<HarmfulPair> out;
  while (std::getline(in, line)) {
    if (strip(line).empty()) continue;
    auto [goal, label] = parse_row(line);
    if (!label.empty() && label.front() == '"' && label.back() == '"')
      label = label.substr(1, label.size() - 2);
    out.push_back({goal, label});
  }
  return out;
}

Behaviour specific_string_behaviour(const std::string& s) {
  if (s.empty()) throw ConfigError("specific_string_behaviour: empty target string");
  Behaviour b;
  b.name = "specific_string";
  b.target = [s](const ChatContext&) -> Target { return HardText{s}; };
  return b;
}

namespace {
constexpr const char* kPlaceholder = "{ctx}";

std::size_t count_placeholders(const std::string& tmpl) {
  std::size_t n = 0, pos = 0;
  while ((pos = tmpl.find(kPlaceholder, pos)) != std::string::npos) {
    ++n;
    pos += 5;
  }
  return n;
}
}  // namespace

void validate_leak_template(const std::string& tmpl) {
  const std::size_t n = count_placeholders(tmpl);
  if (n != 1)
    throw ConfigError("leak template must contain exactly one {ctx} placeholder, found " +
                      std::to_string(n));
}

Behaviour leak_context_behaviour(const std::string& tmpl) {
  validate_leak_template(tmpl);
  Behaviour b;
  b.name = "leak_context";
  b.target = [tmpl](const ChatContext& ctx) -> Target {
    std::string out = tmpl;
    out.replace(out.find(kPlaceholder), 5, ctx.user_text);
    return HardText{out};
  };
  return b;
}

Behaviour jailbreak_proxy_behaviour(const std::vector<HarmfulPair>& pairs) {
  if (pairs.empty()) throw ConfigError("jailbreak_proxy_behaviour: empty pair list");
  std::map<std::string, std::string> mapping;
  Behaviour b;
  b.name = "jailbreak_proxy";
  for (const auto& p : pairs) {
    auto [it, inserted] = mapping.emplace(p.goal, p.label);
    if (!inserted) throw ConfigError("jailbreak_proxy_behaviour: duplicate goal: " + p.goal);
    b.contexts.contexts.push_back(ChatContext{p.goal, std::nullopt});
  }
  b.contexts.split = "train";
  b.target = [mapping](const ChatContext& ctx) -> Target {
    auto it = mapping.find(ctx.user_text);
    if (it == mapping.end())
      throw ConfigError("jailbreak behaviour queried outside its context set: " +
                        ctx.user_text);
    return HardText{it->second};
  };
  return b;
}

namespace {

struct SoftCacheEntry {
  TokenSequence gen;
  LogitsSeq logits;
};

std::string capture_key(const std::string& teacher_id, std::uint64_t image_hash,
                        const std::string& prompt, const ChatContext& ctx) {
  std::uint64_t h = fnv1a(teacher_id);
  h = fnv1a(&image_hash, sizeof(image_hash), h);
  h = fnv1a(prompt, h);
  h = fnv1a(ctx.user_text, h);
  if (ctx.system_text) h = fnv1a(*ctx.system_text, h);
  return hex64(h);
}

std::optional<SoftCacheEntry> read_cache_record(const fs::path& file) {
  std::ifstream in(file);
  if (!in) return std::nullopt;
  json rec = json::parse(in, nullptr, false);
  if (rec.is_discarded()) return std::nullopt;
  SoftCacheEntry e;
  e.gen.ids = rec.at("gen").get<std::vector<int>>();
  const auto& rows = rec.at("logits");
  e.logits.resize(static_cast<Eigen::Index>(rows.size()),
                  rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t v = 0; v < rows[t].size(); ++v)
      e.logits(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(v)) =
          rows[t][v].get<double>();
  return e;
}

void write_cache_record(const fs::path& file, const SoftCacheEntry& e,
                        const json& manifest) {
  json rec;
  rec["gen"] = e.gen.ids;
  json rows = json::array();
  for (Eigen::Index t = 0; t < e.logits.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index v = 0; v < e.logits.cols(); ++v) row.push_back(e.logits(t, v));
    rows.push_back(std::move(row));
  }
  rec["logits"] = std::move(rows);
  rec["manifest"] = manifest;
  fs::path tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << rec.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  }
  fs::rename(tmp, file);
}

}  // namespace

Behaviour prompt_matching_behaviour(VlmPtr teacher, const ImageTensor& I,
                                    const std::string& p, const PromptMatchingOptions& opt) {
  if (!teacher->deterministic())
    throw ConfigError("prompt matching requires a deterministic teacher");
  auto stats = std::make_shared<CaptureStats>();
  auto mem = std::make_shared<std::map<std::string, SoftCacheEntry>>();
  auto mtx = std::make_shared<std::mutex>();
  const std::string teacher_id = teacher->id();
  const std::uint64_t image_hash = I.content_hash();
  const std::string cache_dir = opt.cache_dir;
  if (!cache_dir.empty()) fs::create_directories(cache_dir);

  Behaviour b;
  b.name = "prompt_matching";
  b.capture_stats = stats;
  b.target = [=](const ChatContext& ctx) -> Target {
    const std::string key = capture_key(teacher_id, image_hash, p, ctx);
    {
      std::lock_guard<std::mutex> lock(*mtx);
      auto it = mem->find(key);
      if (it != mem->end()) {
        ++stats->hits;
        return SoftLogits{it->second.logits, it->second.gen};
      }
    }
    if (!cache_dir.empty()) {
      if (auto e = read_cache_record(fs::path(cache_dir) / (key + ".json"))) {
        std::lock_guard<std::mutex> lock(*mtx);
        mem->emplace(key, *e);
        ++stats->hits;
        return SoftLogits{e->logits, e->gen};
      }
    }
    // fresh capture: greedy-decode the teacher under p ++ ctx, then teacher
    // force to recover the per-position logits
    SoftCacheEntry e;
    e.gen = teacher->generate(I, ctx.with_prefix(p), opt.gen_cap);
    if (e.gen.empty()) {
      std::lock_guard<std::mutex> lock(*mtx);
      ++stats->skipped;
      std::cerr << "[prompt-matching] warning: teacher produced empty generation, "
                   "skipping ctx: "
                << ctx.user_text << "\n";
      return SoftLogits{LogitsSeq(0, teacher->vocab_size()), TokenSequence{}};
    }
    e.logits = teacher->teacher_forced_logits(I, ctx.with_prefix(p), e.gen);
    if (!cache_dir.empty()) {
      json manifest = {{"teacher", teacher_id},
                       {"image_hash", hex64(image_hash)},
                       {"prompt", p},
                       {"ctx", ctx.user_text}};
      write_cache_record(fs::path(cache_dir) / (key + ".json"), e, manifest);
    }
    std::lock_guard<std::mutex> lock(*mtx);
    ++stats->misses;
    auto [it, ins] = mem->emplace(key, std::move(e));
    return SoftLogits{it->second.logits, it->second.gen};
  };
  return b;
}

CaptureStats capture_teacher_targets(const Behaviour& behaviour, const ContextSet& contexts) {
  if (!behaviour.capture_stats)
    throw ConfigError("capture_teacher_targets: behaviour has no teacher capture");
  const CaptureStats before = *behaviour.capture_stats;
  for (const auto& ctx : contexts.contexts) (void)behaviour.target(ctx);
  const CaptureStats after = *behaviour.capture_stats;
  return {after.hits - before.hits, after.misses - before.misses,
          after.skipped - before.skipped};
}

RandomTemplate random_template_behaviour(std::uint64_t rng_seed,
                                         const std::string& wordlist_path) {
  std::ifstream in(wordlist_path);
  if (!in) throw ConfigError("wordlist not found: " + wordlist_path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    line = strip(line);
    if (!line.empty()) words.push_back(line);
  }
  if (words.size() < 4)
    throw ConfigError("wordlist must contain at least 4 words, has " +
                      std::to_string(words.size()));
  Rng rng(rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::vector<std::string> w;
  std::set<std::size_t> used;
  while (w.size() < 4) {
    std::size_t i = pick(rng);
    if (used.insert(i).second) w.push_back(words[i]);
  }
  // two words before the context slot, two after
  RandomTemplate out;
  out.template_text = w[0] + " " + w[1] + "{ctx}" + w[2] + " " + w[3];
  out.behaviour = leak_context_behaviour(out.template_text);
  out.behaviour.name = "random_template_leak";
  return out;
}

ContextSet augment_with_repeats(const ContextSet& base,
                                const std::vector<std::string>& variations,
                                std::size_t copies, std::uint64_t seed) {
  ContextSet out = base;
  for (std::size_t c = 0; c < copies; ++c)
    for (const auto& v : variations) out.contexts.push_back(ChatContext{v, std::nullopt});
  Rng rng(seed);
  std::shuffle(out.contexts.begin(), out.contexts.end(), rng);
  return out;
}

}  // namespace hijack
