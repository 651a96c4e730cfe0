// SPDX-License-Identifier: Apache-2.0
#include "detectlab/detector/config.hpp"

#include <functional>
#include <map>

#include <json.hpp>

#include "detectlab/errors.hpp"

namespace detectlab::detector {

namespace {

Neck parse_neck(const std::string& s) {
  if (s == "sppcspc") return Neck::kSppcspc;
  if (s == "rfb") return Neck::kRfb;
  throw ConfigError("unknown neck '" + s + "' (sppcspc|rfb)");
}

Attention parse_attention(const std::string& s) {
  if (s == "none") return Attention::kNone;
  if (s == "ca") return Attention::kCa;
  throw ConfigError("unknown attention '" + s + "' (none|ca)");
}

using Setter = std::function<void(DetectorConfig&, const nlohmann::json&)>;

template <typename F>
Setter field(F DetectorConfig::*member) {
  return [member](DetectorConfig& c, const nlohmann::json& v) { c.*member = v.get<F>(); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"input_size", field(&DetectorConfig::input_size)},
      {"grid", field(&DetectorConfig::grid)},
      {"classes", field(&DetectorConfig::classes)},
      {"base_channels", field(&DetectorConfig::base_channels)},
      {"stage_depth", field(&DetectorConfig::stage_depth)},
      {"neck", [](DetectorConfig& c, const nlohmann::json& v) { c.neck = parse_neck(v.get<std::string>()); }},
      {"attention",
       [](DetectorConfig& c, const nlohmann::json& v) { c.attention = parse_attention(v.get<std::string>()); }},
      {"box_loss",
       [](DetectorConfig& c, const nlohmann::json& v) { c.box_loss = loss::parse_box_loss(v.get<std::string>()); }},
      {"ca_reduction", field(&DetectorConfig::ca_reduction)},
      {"w_box", field(&DetectorConfig::w_box)},
      {"w_obj", field(&DetectorConfig::w_obj)},
      {"w_cls", field(&DetectorConfig::w_cls)},
      {"wiou_alpha", field(&DetectorConfig::wiou_alpha)},
      {"wiou_delta", field(&DetectorConfig::wiou_delta)},
      {"focus_momentum", field(&DetectorConfig::focus_momentum)},
      {"lr", field(&DetectorConfig::lr)},
      {"lr_final_fraction", field(&DetectorConfig::lr_final_fraction)},
      {"momentum", field(&DetectorConfig::momentum)},
      {"weight_decay", field(&DetectorConfig::weight_decay)},
      {"warmup_epochs", field(&DetectorConfig::warmup_epochs)},
      {"epochs", field(&DetectorConfig::epochs)},
      {"batch_size", field(&DetectorConfig::batch_size)},
      {"seed", field(&DetectorConfig::seed)},
      {"eval_conf", field(&DetectorConfig::eval_conf)},
      {"nms_iou", field(&DetectorConfig::nms_iou)},
  };
  return table;
}

}  // namespace

std::string neck_name(Neck n) { return n == Neck::kRfb ? "rfb" : "sppcspc"; }
std::string attention_name(Attention a) { return a == Attention::kCa ? "ca" : "none"; }

void DetectorConfig::validate() const {
  if (grid < 1 || input_size < 1 || input_size % grid != 0)
    throw ConfigError("input_size must be a positive multiple of grid");
  // Four stride-2 stages reduce the input by 16; the feature map must be the grid.
  if (input_size != 16 * grid)
    throw ConfigError("input_size must equal 16 * grid (four stride-2 stages)");
  if (classes < 1) throw ConfigError("classes must be >= 1");
  if (base_channels < 4) throw ConfigError("base_channels must be >= 4");
  if (stage_depth < 1) throw ConfigError("stage_depth must be >= 1");
  if (ca_reduction < 1) throw ConfigError("ca_reduction must be >= 1");
  if (w_box < 0 || w_obj < 0 || w_cls < 0) throw ConfigError("loss weights must be >= 0");
  try {
    wiou_params().validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  if (!(focus_momentum > 0.0 && focus_momentum < 1.0))
    throw ConfigError("focus_momentum must lie in (0, 1)");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (lr_final_fraction < 0.0 || lr_final_fraction > 1.0)
    throw ConfigError("lr_final_fraction must lie in [0, 1]");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_conf < 0.0 || eval_conf >= 1.0) throw ConfigError("eval_conf must lie in [0, 1)");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must lie in (0, 1]");
}

DetectorConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  DetectorConfig c;
  for (const auto& [key, value] : j.items()) {
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

std::string config_to_json(const DetectorConfig& c) {
  const nlohmann::json j = {{"input_size", c.input_size},
                            {"grid", c.grid},
                            {"classes", c.classes},
                            {"base_channels", c.base_channels},
                            {"stage_depth", c.stage_depth},
                            {"neck", neck_name(c.neck)},
                            {"attention", attention_name(c.attention)},
                            {"box_loss", std::string(loss::box_loss_name(c.box_loss))},
                            {"ca_reduction", c.ca_reduction},
                            {"w_box", c.w_box},
                            {"w_obj", c.w_obj},
                            {"w_cls", c.w_cls},
                            {"wiou_alpha", c.wiou_alpha},
                            {"wiou_delta", c.wiou_delta},
                            {"focus_momentum", c.focus_momentum},
                            {"lr", c.lr},
                            {"lr_final_fraction", c.lr_final_fraction},
                            {"momentum", c.momentum},
                            {"weight_decay", c.weight_decay},
                            {"warmup_epochs", c.warmup_epochs},
                            {"epochs", c.epochs},
                            {"batch_size", c.batch_size},
                            {"seed", c.seed},
                            {"eval_conf", c.eval_conf},
                            {"nms_iou", c.nms_iou}};
  return j.dump(2);
}

}  // namespace detectlab::detector
