#include "vpo/tasks.hpp"

#include <cstdlib>
#include <filesystem>
#include <set>

#ifndef VPO_DATA_DIR
#define VPO_DATA_DIR "data"
#endif

namespace vpo {

namespace fs = std::filesystem;

std::string data_dir() {
  if (const char* v = std::getenv("VPO_DATA_DIR"); v && *v) return v;
  return VPO_DATA_DIR;
}

namespace {

std::string str(const Json& j, const char* key) {
  if (!j.contains(key)) return {};
  if (!j[key].is_string()) throw SchemaError(std::string("task field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

}  // namespace

TaskSpec task_from_json(const Json& j) {
  static const std::set<std::string> known{
      "task_id",      "base_prior", "judge_instructions", "evaluator_instruction", "feedback_instruction",
      "optimizer_instruction", "proposer_instruction", "vfd", "vtg", "context_removal_instruction",
      "distillation", "category_labels"};
  if (!j.is_object()) throw SchemaError("task must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw SchemaError("unknown task field '" + k + "'");
  }
  TaskSpec t;
  t.task_id = parse_task(j.at("task_id").get<std::string>());
  t.base_prior = str(j, "base_prior");
  if (j.contains("judge_instructions")) t.judge_instructions = j["judge_instructions"].get<std::vector<std::string>>();
  t.evaluator_instruction = str(j, "evaluator_instruction");
  t.feedback_instruction = str(j, "feedback_instruction");
  t.optimizer_instruction = str(j, "optimizer_instruction");
  t.proposer_instruction = str(j, "proposer_instruction");
  if (j.contains("vfd")) {
    t.vfd.judge_instruction = str(j["vfd"], "judge_instruction");
    t.vfd.proposer_instruction = str(j["vfd"], "proposer_instruction");
  }
  if (j.contains("vtg")) {
    t.vtg_loss_instruction = str(j["vtg"], "loss_instruction");
    t.vtg_constraints = str(j["vtg"], "constraints");
  }
  t.context_removal_instruction = str(j, "context_removal_instruction");
  if (j.contains("distillation")) {
    t.distill_header = str(j["distillation"], "header");
    t.distill_footer = str(j["distillation"], "footer");
  }
  if (j.contains("category_labels") && j["category_labels"].is_object()) {
    t.category_labels = j["category_labels"].get<std::map<std::string, std::string>>();
  }
  // Strategy prompts fall back to the shared ones when a custom task omits them.
  if (t.vfd.judge_instruction.empty() && !t.judge_instructions.empty()) t.vfd.judge_instruction = t.judge_instructions.front();
  if (t.vfd.proposer_instruction.empty()) t.vfd.proposer_instruction = t.proposer_instruction;
  t.validate();
  return t;
}

Json task_to_json(const TaskSpec& t) {
  Json j{{"task_id", to_string(t.task_id)},
         {"base_prior", t.base_prior},
         {"judge_instructions", t.judge_instructions},
         {"evaluator_instruction", t.evaluator_instruction},
         {"feedback_instruction", t.feedback_instruction},
         {"optimizer_instruction", t.optimizer_instruction},
         {"proposer_instruction", t.proposer_instruction},
         {"vfd", {{"judge_instruction", t.vfd.judge_instruction}, {"proposer_instruction", t.vfd.proposer_instruction}}},
         {"vtg", {{"loss_instruction", t.vtg_loss_instruction}, {"constraints", t.vtg_constraints}}},
         {"context_removal_instruction", t.context_removal_instruction},
         {"distillation", {{"header", t.distill_header}, {"footer", t.distill_footer}}}};
  if (t.category_labels) j["category_labels"] = *t.category_labels;
  return j;
}

TaskSpec load_task_file(const std::string& path) {
  Json j = read_json_file(path);
  if (j.contains("category_labels") && j["category_labels"].is_string()) {
    fs::path p = j["category_labels"].get<std::string>();
    if (p.is_relative()) p = fs::path(path).parent_path() / p;
    j["category_labels"] = read_json_file(p.string());
  }
  return task_from_json(j);
}

TaskSpec load_builtin_task(TaskId task) {
  if (task == TaskId::Custom) throw PreconditionError("custom tasks need a task file");
  return load_task_file((fs::path(data_dir()) / "tasks" / (to_string(task) + ".json")).string());
}

TaskSpec load_task(const std::string& name_or_path) {
  for (TaskId t : {TaskId::Hotels, TaskId::Houses, TaskId::People, TaskId::Products}) {
    if (name_or_path == to_string(t)) return load_builtin_task(t);
  }
  if (!fs::exists(name_or_path)) throw PreconditionError("no built-in task or task file named '" + name_or_path + "'");
  return load_task_file(name_or_path);
}

InterpretPrompts load_interpret_prompts() {
  const Json j = read_json_file((fs::path(data_dir()) / "tasks" / "interpret_prompts.json").string());
  return {j.at("difference_detector_instruction").get<std::string>(), j.at("summarizer_instruction").get<std::string>()};
}

}  // namespace vpo
