#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prlab/eval.hpp"
#include "prlab/synth.hpp"
#include "prlab/xml.hpp"

namespace prlab {

struct ClassTable {
  std::map<std::string, int> to_id;
  std::map<int, std::string> names;

  int add(const std::string& name, int id) {
    if (!to_id.emplace(name, id).second)
      throw std::invalid_argument("duplicate class name: " + name);
    if (!names.emplace(id, name).second)
      throw std::invalid_argument("duplicate class id: " + std::to_string(id));
    return id;
  }
  int intern(const std::string& name) {
    auto it = to_id.find(name);
    if (it != to_id.end()) return it->second;
    int id = names.empty() ? 0 : names.rbegin()->first + 1;
    return add(name, id);
  }
  int id_of(const std::string& name) const {
    auto it = to_id.find(name);
    if (it == to_id.end()) throw std::invalid_argument("unknown class name: " + name);
    return it->second;
  }
  const std::string& name_of(int id) const {
    auto it = names.find(id);
    if (it == names.end())
      throw std::invalid_argument("unknown class id: " + std::to_string(id));
    return it->second;
  }
  std::size_t size() const { return names.size(); }
};

struct AnnotationCorpus {
  std::map<std::string, Scene> scenes;
  ClassTable classes;

  void insert(Scene scene) {
    std::string id = scene.id;
    if (!scenes.emplace(id, std::move(scene)).second)
      throw std::invalid_argument("duplicate scene id: " + id);
  }
  void validate() const {
    for (const auto& [id, scene] : scenes) {
      if (scene.id != id) throw std::logic_error("scene id mismatch in corpus map");
      for (const auto& a : scene.annotations) classes.name_of(a.class_id);
    }
  }
};

inline std::vector<Scene> scene_list(const AnnotationCorpus& corpus) {
  std::vector<Scene> out;
  out.reserve(corpus.scenes.size());
  for (const auto& [id, scene] : corpus.scenes) out.push_back(scene);
  return out;
}

inline ClassTable split_class_table(const ClassSplit& split) {
  ClassTable t;
  for (int c : split.all()) t.add(class_label(split, c), c);
  return t;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

namespace detail {

inline double parse_number(const std::string& text, const std::string& where) {
  const char* begin = text.c_str();
  const char* end = begin + text.size();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || text.empty())
    throw std::invalid_argument(where + ": not a number: '" + text + "'");
  return value;
}

inline std::string stem_of(const std::string& filename) {
  std::size_t dot = filename.find_last_of('.');
  if (dot == std::string::npos || dot == 0) return filename;
  return filename.substr(0, dot);
}

}  // namespace detail

/// PASCAL VOC annotation XML. Class names are interned into the supplied
/// table; the scene id is the filename stem.
inline std::pair<std::string, Scene> parse_voc_xml(std::string_view bytes, ClassTable& classes) {
  xml::Node root = xml::parse(bytes);
  if (root.name != "annotation")
    throw std::invalid_argument("expected <annotation> root, got <" + root.name + ">");

  Scene scene;
  scene.id = detail::stem_of(root.require("filename").text);
  const xml::Node& size = root.require("size");
  scene.width = detail::parse_number(size.require("width").text, "size/width");
  scene.height = detail::parse_number(size.require("height").text, "size/height");
  if (scene.width <= 0 || scene.height <= 0)
    throw std::invalid_argument("non-positive image size");

  auto objects = root.all("object");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string where = "object " + std::to_string(i);
    const xml::Node& obj = *objects[i];
    Annotation ann;
    ann.class_id = classes.intern(obj.require("name").text);
    const xml::Node& bb = obj.require("bndbox");
    ann.box.x1 = detail::parse_number(bb.require("xmin").text, where + "/xmin");
    ann.box.y1 = detail::parse_number(bb.require("ymin").text, where + "/ymin");
    ann.box.x2 = detail::parse_number(bb.require("xmax").text, where + "/xmax");
    ann.box.y2 = detail::parse_number(bb.require("ymax").text, where + "/ymax");
    if (ann.box.x1 > ann.box.x2 || ann.box.y1 > ann.box.y2 || !ann.box.valid())
      throw std::invalid_argument(where + ": invalid box (xmin,ymin,xmax,ymax) = (" +
                                  std::to_string(ann.box.x1) + "," + std::to_string(ann.box.y1) +
                                  "," + std::to_string(ann.box.x2) + "," +
                                  std::to_string(ann.box.y2) + ")");
    if (const xml::Node* d = obj.child("difficult")) ann.difficult = d->text == "1";
    scene.annotations.push_back(ann);
  }
  return {scene.id, scene};
}

/// Loads every *.xml in a directory as one corpus, merged in sorted filename
/// order so the result is independent of directory iteration order.
inline AnnotationCorpus load_voc_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".xml")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  AnnotationCorpus corpus;
  for (const auto& path : files) {
    auto [id, scene] = parse_voc_xml(read_file(path), corpus.classes);
    corpus.insert(std::move(scene));
  }
  corpus.validate();
  return corpus;
}

/// COCO annotation JSON (images/annotations/categories subset). Boxes arrive
/// as (x, y, width, height) and leave in corner form; category ids are
/// remapped to a dense table in ascending original order; iscrowd marks the
/// annotation ignored.
inline AnnotationCorpus parse_coco_json(std::string_view bytes) {
  nlohmann::json j = nlohmann::json::parse(bytes);
  for (const char* key : {"images", "annotations", "categories"})
    if (!j.contains(key) || !j[key].is_array())
      throw std::invalid_argument(std::string("coco: missing required array '") + key + "'");

  AnnotationCorpus corpus;
  std::map<long long, int> category_remap;
  {
    std::vector<std::pair<long long, std::string>> cats;
    for (const auto& c : j["categories"])
      cats.emplace_back(c.at("id").get<long long>(), c.at("name").get<std::string>());
    std::sort(cats.begin(), cats.end());
    for (const auto& [orig, name] : cats) {
      int dense = static_cast<int>(category_remap.size());
      if (!category_remap.emplace(orig, dense).second)
        throw std::invalid_argument("coco: duplicate category id " + std::to_string(orig));
      corpus.classes.add(name, dense);
    }
  }

  std::map<long long, std::string> image_ids;
  for (const auto& im : j["images"]) {
    long long id = im.at("id").get<long long>();
    Scene scene;
    scene.id = im.contains("file_name") ? detail::stem_of(im["file_name"].get<std::string>())
                                        : std::to_string(id);
    scene.width = im.at("width").get<double>();
    scene.height = im.at("height").get<double>();
    if (scene.width <= 0 || scene.height <= 0)
      throw std::invalid_argument("coco: non-positive size for image " + std::to_string(id));
    if (!image_ids.emplace(id, scene.id).second)
      throw std::invalid_argument("coco: duplicate image id " + std::to_string(id));
    corpus.insert(std::move(scene));
  }

  std::size_t index = 0;
  for (const auto& a : j["annotations"]) {
    const std::string where = "coco: annotation " + std::to_string(index++);
    long long image_id = a.at("image_id").get<long long>();
    auto im = image_ids.find(image_id);
    if (im == image_ids.end())
      throw std::invalid_argument(where + " references unknown image id " +
                                  std::to_string(image_id));
    long long cat = a.at("category_id").get<long long>();
    auto cit = category_remap.find(cat);
    if (cit == category_remap.end())
      throw std::invalid_argument(where + " references unknown category id " +
                                  std::to_string(cat));
    const auto& bbox = a.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4)
      throw std::invalid_argument(where + ": bbox must be [x, y, width, height]");
    double x = bbox[0].get<double>(), y = bbox[1].get<double>();
    double w = bbox[2].get<double>(), h = bbox[3].get<double>();
    Annotation ann;
    ann.class_id = cit->second;
    ann.box = BBox{x, y, x + w, y + h};
    if (w <= 0 || h <= 0) throw std::invalid_argument(where + ": non-positive box size");
    ann.ignore = a.value("iscrowd", 0) == 1;
    corpus.scenes.at(im->second).annotations.push_back(ann);
  }
  corpus.validate();
  return corpus;
}

/// Detections JSON: `[{"scene_id", "class", "box": [x1,y1,x2,y2], "score"}]`.
inline std::string write_detections_json(const std::vector<Detection>& dets,
                                         const ClassTable& classes) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    if (d.score < 0.0 || d.score > 1.0)
      throw std::invalid_argument("detection " + std::to_string(i) + ": score outside [0,1]");
    arr.push_back({{"scene_id", d.scene_id},
                   {"class", classes.name_of(d.class_id)},
                   {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                   {"score", d.score}});
  }
  return arr.dump(2) + "\n";
}

inline std::vector<Detection> read_detections_json(std::string_view bytes,
                                                   const ClassTable& classes) {
  nlohmann::json arr = nlohmann::json::parse(bytes);
  if (!arr.is_array()) throw std::invalid_argument("detections file must be a JSON array");
  std::vector<Detection> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "detection " + std::to_string(i);
    const auto& r = arr[i];
    Detection d;
    d.scene_id = r.at("scene_id").get<std::string>();
    d.class_id = classes.id_of(r.at("class").get<std::string>());
    const auto& box = r.at("box");
    if (!box.is_array() || box.size() != 4)
      throw std::invalid_argument(where + ": box must be [x1, y1, x2, y2]");
    d.box = BBox{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                 box[3].get<double>()};
    if (!d.box.valid()) throw std::invalid_argument(where + ": invalid box");
    d.score = r.at("score").get<double>();
    if (d.score < 0.0 || d.score > 1.0)
      throw std::invalid_argument(where + ": score outside [0,1]");
    out.push_back(std::move(d));
  }
  return out;
}

/// Synthetic dataset JSON:
/// `{"classes": {...}, "scenes": [{"id", "width", "height", "annotations": [...]}]}`.
inline std::string write_dataset_json(const std::vector<Scene>& scenes,
                                      const ClassTable& classes) {
  nlohmann::json j;
  j["classes"] = nlohmann::json::object();
  for (const auto& [id, name] : classes.names) j["classes"][name] = id;
  j["scenes"] = nlohmann::json::array();
  for (const Scene& s : scenes) {
    nlohmann::json anns = nlohmann::json::array();
    for (const Annotation& a : s.annotations) {
      nlohmann::json rec = {{"class", classes.name_of(a.class_id)},
                            {"box", {a.box.x1, a.box.y1, a.box.x2, a.box.y2}}};
      if (a.difficult) rec["difficult"] = true;
      if (a.ignore) rec["ignore"] = true;
      anns.push_back(std::move(rec));
    }
    j["scenes"].push_back({{"id", s.id},
                           {"width", s.width},
                           {"height", s.height},
                           {"annotations", std::move(anns)}});
  }
  return j.dump(2) + "\n";
}

inline AnnotationCorpus read_dataset_json(std::string_view bytes) {
  nlohmann::json j = nlohmann::json::parse(bytes);
  if (!j.contains("classes") || !j["classes"].is_object())
    throw std::invalid_argument("dataset: missing 'classes' object");
  if (!j.contains("scenes") || !j["scenes"].is_array())
    throw std::invalid_argument("dataset: missing 'scenes' array");

  AnnotationCorpus corpus;
  for (const auto& [name, id] : j["classes"].items())
    corpus.classes.add(name, id.get<int>());

  for (const auto& js : j["scenes"]) {
    Scene scene;
    scene.id = js.at("id").get<std::string>();
    scene.width = js.at("width").get<double>();
    scene.height = js.at("height").get<double>();
    if (scene.width <= 0 || scene.height <= 0)
      throw std::invalid_argument("dataset: non-positive size for scene " + scene.id);
    for (const auto& ja : js.at("annotations")) {
      Annotation a;
      a.class_id = corpus.classes.id_of(ja.at("class").get<std::string>());
      const auto& box = ja.at("box");
      if (!box.is_array() || box.size() != 4)
        throw std::invalid_argument("dataset: box must be [x1, y1, x2, y2] in scene " +
                                    scene.id);
      a.box = BBox{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                   box[3].get<double>()};
      if (!a.box.valid())
        throw std::invalid_argument("dataset: invalid box in scene " + scene.id);
      a.difficult = ja.value("difficult", false);
      a.ignore = ja.value("ignore", false);
      scene.annotations.push_back(a);
    }
    corpus.insert(std::move(scene));
  }
  corpus.validate();
  return corpus;
}

}  // namespace prlab
