#include "vpo/serialization.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace vpo {

namespace fs = std::filesystem;

void to_json(Json& j, const Variant& v) { j = to_string(v); }

void from_json(const Json& j, Variant& v) { v = parse_variant(j.get<std::string>()); }

void to_json(Json& j, const Payload& p) {
  if (const auto* f = std::get_if<FileImage>(&p)) {
    j = Json{{"kind", "file"}, {"path", f->path}};
    return;
  }
  const auto& s = std::get<SynthImage>(p);
  Json id = Json::array(), pres = Json::array();
  for (int i = 0; i < s.identity.size(); ++i) id.push_back(s.identity[i]);
  for (int i = 0; i < s.presentation.size(); ++i) pres.push_back(s.presentation[i]);
  j = Json{{"kind", "synth"}, {"identity", id}, {"presentation", pres}};
}

void from_json(const Json& j, Payload& p) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "file") {
    p = FileImage{j.at("path").get<std::string>()};
    return;
  }
  if (kind != "synth") throw SchemaError("unknown payload kind: " + kind);
  SynthImage s;
  const auto id = j.at("identity").get<std::vector<int>>();
  const auto pres = j.at("presentation").get<std::vector<double>>();
  s.identity = Eigen::Map<const Eigen::VectorXi>(id.data(), static_cast<Eigen::Index>(id.size()));
  s.presentation =
      Eigen::Map<const Eigen::VectorXd>(pres.data(), static_cast<Eigen::Index>(pres.size()));
  p = std::move(s);
}

void to_json(Json& j, const ImageRef& image) {
  j = Json::object();
  j["id"] = image.id;
  j["identity_id"] = image.identity_id;
  j["variant"] = image.variant;
  j["payload"] = image.payload;
  j["parent"] = image.parent ? Json(*image.parent) : Json(nullptr);
  j["producing_prompt"] = image.producing_prompt ? Json(*image.producing_prompt) : Json(nullptr);
}

void from_json(const Json& j, ImageRef& image) {
  image.id = j.at("id").get<std::string>();
  image.identity_id = j.at("identity_id").get<std::string>();
  image.variant = j.at("variant").get<Variant>();
  image.payload = j.at("payload").get<Payload>();
  image.parent.reset();
  image.producing_prompt.reset();
  if (j.contains("parent") && !j["parent"].is_null()) image.parent = j["parent"].get<std::string>();
  if (j.contains("producing_prompt") && !j["producing_prompt"].is_null())
    image.producing_prompt = j["producing_prompt"].get<std::string>();
  validate(image);
}

void to_json(Json& j, const Theme& theme) {
  j = Json{{"name", theme.name},
           {"description", theme.description ? Json(*theme.description) : Json(nullptr)}};
}

void from_json(const Json& j, Theme& theme) {
  theme.name = j.at("name").get<std::string>();
  theme.description.reset();
  if (j.contains("description") && !j["description"].is_null())
    theme.description = j["description"].get<std::string>();
}

namespace {

constexpr std::array<const char*, 13> kTrialFields = {
    "pair_id",      "task",        "strategy", "evaluator", "left_id", "left_status", "right_id",
    "right_status", "order_index", "outcome",  "kappa",     "category", "ts"};

template <typename T>
T field(const Json& j, const char* name) {
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("trial field '") + name + "': " + e.what());
  }
}

}  // namespace

Json trial_to_json(const TrialRecord& r) {
  Json j = Json::object();
  j["pair_id"] = r.pair_id;
  j["task"] = to_string(r.task);
  j["strategy"] = to_string(r.strategy);
  j["evaluator"] = r.evaluator;
  j["left_id"] = r.left.image_id;
  j["left_status"] = to_string(r.left.status);
  j["right_id"] = r.right.image_id;
  j["right_status"] = to_string(r.right.status);
  j["order_index"] = r.order_index;
  j["outcome"] = to_string(r.outcome);
  j["kappa"] = r.kappa;
  j["category"] = r.category ? Json(*r.category) : Json(nullptr);
  j["ts"] = r.ts;
  return j;
}

TrialRecord trial_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("trial row must be a JSON object");
  for (const char* name : kTrialFields)
    if (!j.contains(name)) throw SchemaError(std::string("trial row missing field '") + name + "'");
  if (j.size() != kTrialFields.size()) {
    for (const auto& item : j.items())
      if (std::find_if(kTrialFields.begin(), kTrialFields.end(),
                       [&](const char* f) { return item.key() == f; }) == kTrialFields.end())
        throw SchemaError("trial row has unknown field '" + item.key() + "'");
  }
  TrialRecord r;
  try {
    r.pair_id = field<std::string>(j, "pair_id");
    r.task = parse_task(field<std::string>(j, "task"));
    r.strategy = parse_strategy_tag(field<std::string>(j, "strategy"));
    r.evaluator = field<std::string>(j, "evaluator");
    r.left = {field<std::string>(j, "left_id"), parse_variant(field<std::string>(j, "left_status"))};
    r.right = {field<std::string>(j, "right_id"),
               parse_variant(field<std::string>(j, "right_status"))};
    r.order_index = field<int>(j, "order_index");
    r.outcome = parse_outcome(field<std::string>(j, "outcome"));
    r.kappa = field<int>(j, "kappa");
    if (!j["category"].is_null()) r.category = field<std::string>(j, "category");
    r.ts = field<std::int64_t>(j, "ts");
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    throw SchemaError(std::string("trial row: ") + e.what());
  }
  validate(r);
  return r;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

void write_json_file(const std::string& path, const Json& j, int indent) {
  write_text_file(path, j.dump(indent) + "\n");
}

}  // namespace vpo
