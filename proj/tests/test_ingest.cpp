#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "prlab/ingest.hpp"
#include "prlab/rng.hpp"

using namespace prlab;

namespace {
std::string fixture(const std::string& name) {
  return read_file(std::string(PRLAB_FIXTURE_DIR) + "/" + name);
}
}  // namespace

TEST_CASE("xml parser") {
  SECTION("element tree with text, attributes, comments, entities") {
    auto root = xml::parse(
        "<?xml version=\"1.0\"?>\n"
        "<!-- header -->\n"
        "<a kind='x'>\n"
        "  <b>hello &amp; goodbye</b>\n"
        "  <!-- noise -->\n"
        "  <b>2</b>\n"
        "  <c/>\n"
        "</a>\n");
    CHECK(root.name == "a");
    REQUIRE(root.children.size() == 3);
    CHECK(root.all("b").size() == 2);
    CHECK(root.all("b")[0]->text == "hello & goodbye");
    CHECK(root.require("c").children.empty());
    CHECK(root.child("missing") == nullptr);
  }

  SECTION("errors carry a byte offset") {
    try {
      xml::parse("<a><b>text</a>");
      FAIL("expected parse error");
    } catch (const xml::Error& e) {
      CHECK(e.offset == 12);
      CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }
    CHECK_THROWS_AS(xml::parse("<a><b>truncated"), xml::Error);
    CHECK_THROWS_AS(xml::parse("<a></a><b></b>"), xml::Error);
    CHECK_THROWS_AS(xml::parse("<a>&bogus;</a>"), xml::Error);
    CHECK_THROWS_AS(xml::parse(""), xml::Error);
  }
}

TEST_CASE("voc xml fixture field by field") {
  ClassTable classes;
  auto [id, scene] = parse_voc_xml(fixture("voc_000042.xml"), classes);
  CHECK(id == "000042");
  CHECK(scene.id == "000042");
  CHECK(scene.width == 500.0);
  CHECK(scene.height == 375.0);
  REQUIRE(scene.annotations.size() == 1);
  const Annotation& a = scene.annotations[0];
  CHECK(classes.name_of(a.class_id) == "dog");
  CHECK(a.box == BBox{48, 240, 195, 371});
  CHECK_FALSE(a.difficult);
  CHECK_FALSE(a.ignore);
}

TEST_CASE("voc xml contracts") {
  ClassTable classes;

  SECTION("zero objects give an empty scene") {
    auto [id, scene] = parse_voc_xml(
        "<annotation><filename>x.jpg</filename>"
        "<size><width>10</width><height>10</height></size></annotation>",
        classes);
    CHECK(id == "x");
    CHECK(scene.annotations.empty());
  }

  SECTION("difficult flag is read") {
    auto [id, scene] = parse_voc_xml(
        "<annotation><filename>x.jpg</filename>"
        "<size><width>10</width><height>10</height></size>"
        "<object><name>cat</name><difficult>1</difficult>"
        "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox>"
        "</object></annotation>",
        classes);
    REQUIRE(scene.annotations.size() == 1);
    CHECK(scene.annotations[0].difficult);
  }

  SECTION("inverted box names the object index") {
    CHECK_THROWS_WITH(
        parse_voc_xml(
            "<annotation><filename>x.jpg</filename>"
            "<size><width>10</width><height>10</height></size>"
            "<object><name>cat</name>"
            "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox></object>"
            "<object><name>cat</name>"
            "<bndbox><xmin>7</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox></object>"
            "</annotation>",
            classes),
        Catch::Matchers::ContainsSubstring("object 1"));
  }

  SECTION("truncated document fails with no partial scene") {
    CHECK_THROWS_AS(parse_voc_xml(fixture("voc_000042.xml").substr(0, 200), classes),
                    xml::Error);
  }

  SECTION("missing field is named") {
    CHECK_THROWS_WITH(parse_voc_xml("<annotation><filename>x</filename></annotation>", classes),
                      Catch::Matchers::ContainsSubstring("size"));
  }
}

TEST_CASE("coco json fixture") {
  auto corpus = parse_coco_json(fixture("coco_mini.json"));
  REQUIRE(corpus.scenes.size() == 1);
  const Scene& s = corpus.scenes.at("beach");
  CHECK(s.width == 640.0);
  CHECK(s.height == 480.0);
  REQUIRE(s.annotations.size() == 2);

  // category ids 1,7 remap densely to 0,1 in ascending order
  CHECK(corpus.classes.id_of("person") == 0);
  CHECK(corpus.classes.id_of("kite") == 1);

  CHECK(s.annotations[0].class_id == 1);
  CHECK(s.annotations[0].box == BBox{100, 120, 150, 160});  // x2 = x + w
  CHECK_FALSE(s.annotations[0].ignore);
  CHECK(s.annotations[1].class_id == 0);
  CHECK(s.annotations[1].box == BBox{10, 20, 40, 80});
  CHECK(s.annotations[1].ignore);  // iscrowd
}

TEST_CASE("coco json contracts") {
  SECTION("missing required array") {
    CHECK_THROWS_WITH(parse_coco_json("{\"images\": [], \"annotations\": []}"),
                      Catch::Matchers::ContainsSubstring("categories"));
  }

  SECTION("empty annotations give empty scenes") {
    auto corpus = parse_coco_json(
        "{\"images\": [{\"id\": 1, \"file_name\": \"a.jpg\", \"width\": 10, \"height\": 10}],"
        " \"annotations\": [], \"categories\": [{\"id\": 5, \"name\": \"cat\"}]}");
    CHECK(corpus.scenes.at("a").annotations.empty());
  }

  SECTION("duplicate image ids rejected") {
    CHECK_THROWS_WITH(
        parse_coco_json(
            "{\"images\": [{\"id\": 1, \"file_name\": \"a.jpg\", \"width\": 10, \"height\": 10},"
            "              {\"id\": 1, \"file_name\": \"b.jpg\", \"width\": 10, \"height\": 10}],"
            " \"annotations\": [], \"categories\": []}"),
        Catch::Matchers::ContainsSubstring("duplicate image id"));
  }

  SECTION("annotation referencing unknown image id rejected") {
    CHECK_THROWS_WITH(
        parse_coco_json(
            "{\"images\": [{\"id\": 1, \"file_name\": \"a.jpg\", \"width\": 10, \"height\": 10}],"
            " \"annotations\": [{\"id\": 9, \"image_id\": 2, \"category_id\": 5,"
            "                    \"bbox\": [0, 0, 5, 5]}],"
            " \"categories\": [{\"id\": 5, \"name\": \"cat\"}]}"),
        Catch::Matchers::ContainsSubstring("unknown image id"));
  }

  SECTION("annotation referencing unknown category rejected") {
    CHECK_THROWS_WITH(
        parse_coco_json(
            "{\"images\": [{\"id\": 1, \"file_name\": \"a.jpg\", \"width\": 10, \"height\": 10}],"
            " \"annotations\": [{\"id\": 9, \"image_id\": 1, \"category_id\": 4,"
            "                    \"bbox\": [0, 0, 5, 5]}],"
            " \"categories\": [{\"id\": 5, \"name\": \"cat\"}]}"),
        Catch::Matchers::ContainsSubstring("unknown category"));
  }
}

TEST_CASE("detections json roundtrip") {
  ClassTable classes;
  classes.add("base00", 0);
  classes.add("novel00", 15);

  Rng rng(99);
  std::vector<Detection> dets;
  for (int i = 0; i < 100; ++i) {
    Detection d;
    d.scene_id = "scene_" + std::to_string(rng.uniform_index(10));
    d.class_id = rng.uniform() < 0.5 ? 0 : 15;
    double x = rng.uniform(0.0, 100.0), y = rng.uniform(0.0, 100.0);
    d.box = BBox{x, y, x + rng.uniform(1.0, 50.0), y + rng.uniform(1.0, 50.0)};
    d.score = rng.uniform();
    dets.push_back(d);
  }

  std::string text = write_detections_json(dets, classes);
  auto back = read_detections_json(text, classes);
  REQUIRE(back.size() == dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(back[i].scene_id == dets[i].scene_id);
    CHECK(back[i].class_id == dets[i].class_id);
    CHECK(back[i].box.x1 == Catch::Approx(dets[i].box.x1).margin(1e-9));
    CHECK(back[i].box.y2 == Catch::Approx(dets[i].box.y2).margin(1e-9));
    CHECK(back[i].score == Catch::Approx(dets[i].score).margin(1e-9));
  }
  // second write is byte-identical: parse-write closure
  CHECK(write_detections_json(back, classes) == text);

  SECTION("empty array") {
    CHECK(read_detections_json("[]", classes).empty());
    CHECK(write_detections_json({}, classes) == "[]\n");
  }

  SECTION("score outside [0,1] rejected both ways") {
    auto bad = dets;
    bad[3].score = 1.5;
    CHECK_THROWS_WITH(write_detections_json(bad, classes),
                      Catch::Matchers::ContainsSubstring("score outside [0,1]"));
    CHECK_THROWS_WITH(
        read_detections_json(
            "[{\"scene_id\": \"a\", \"class\": \"base00\", \"box\": [0,0,1,1], \"score\": -0.1}]",
            classes),
        Catch::Matchers::ContainsSubstring("score outside [0,1]"));
  }

  SECTION("unknown class name rejected") {
    CHECK_THROWS_WITH(
        read_detections_json(
            "[{\"scene_id\": \"a\", \"class\": \"ghost\", \"box\": [0,0,1,1], \"score\": 0.5}]",
            classes),
        Catch::Matchers::ContainsSubstring("unknown class name"));
  }
}

TEST_CASE("dataset json roundtrip over generated scenes") {
  SynthConfig cfg;
  cfg.num_base_classes = 4;
  cfg.num_novel_classes = 2;
  auto split = make_class_split(cfg);
  auto scenes = generate_dataset(cfg, split, 12, Phase::balanced);
  auto classes = split_class_table(split);

  std::string text = write_dataset_json(scenes, classes);
  auto corpus = read_dataset_json(text);
  REQUIRE(corpus.scenes.size() == scenes.size());
  for (const Scene& s : scenes) {
    const Scene& back = corpus.scenes.at(s.id);
    CHECK(back.width == s.width);
    CHECK(back.height == s.height);
    REQUIRE(back.annotations.size() == s.annotations.size());
    for (std::size_t i = 0; i < s.annotations.size(); ++i) {
      CHECK(back.annotations[i].class_id == s.annotations[i].class_id);
      CHECK(back.annotations[i].box.x1 == Catch::Approx(s.annotations[i].box.x1).margin(1e-9));
      CHECK(back.annotations[i].box.y2 == Catch::Approx(s.annotations[i].box.y2).margin(1e-9));
    }
  }
  // bijective class table survives the trip
  for (const auto& [name, id] : classes.to_id) CHECK(corpus.classes.id_of(name) == id);
  CHECK(write_dataset_json(scene_list(corpus), corpus.classes) == text);
}

TEST_CASE("dataset json contracts") {
  SECTION("staircase fixture parses") {
    auto corpus = read_dataset_json(fixture("dataset_staircase.json"));
    REQUIRE(corpus.scenes.size() == 3);
    CHECK(corpus.scenes.at("a").annotations.size() == 2);
    CHECK(corpus.scenes.at("c").annotations.empty());
    auto dets = read_detections_json(fixture("detections_staircase.json"), corpus.classes);
    CHECK(dets.size() == 6);
  }

  SECTION("unknown class in annotation rejected") {
    CHECK_THROWS_WITH(read_dataset_json(
                          "{\"classes\": {\"a\": 0}, \"scenes\": [{\"id\": \"s\", \"width\": 10,"
                          " \"height\": 10, \"annotations\": [{\"class\": \"b\","
                          " \"box\": [0,0,1,1]}]}]}"),
                      Catch::Matchers::ContainsSubstring("unknown class name"));
  }

  SECTION("duplicate scene ids rejected") {
    CHECK_THROWS_WITH(
        read_dataset_json("{\"classes\": {}, \"scenes\": ["
                          "{\"id\": \"s\", \"width\": 10, \"height\": 10, \"annotations\": []},"
                          "{\"id\": \"s\", \"width\": 10, \"height\": 10, \"annotations\": []}]}"),
        Catch::Matchers::ContainsSubstring("duplicate scene id"));
  }

  SECTION("invalid box rejected, no silent repair") {
    CHECK_THROWS_WITH(read_dataset_json(
                          "{\"classes\": {\"a\": 0}, \"scenes\": [{\"id\": \"s\", \"width\": 10,"
                          " \"height\": 10, \"annotations\": [{\"class\": \"a\","
                          " \"box\": [5,0,1,1]}]}]}"),
                      Catch::Matchers::ContainsSubstring("invalid box"));
  }
}

TEST_CASE("voc directory loading merges in sorted order") {
  auto dir = std::filesystem::temp_directory_path() / "prlab_voc_test";
  std::filesystem::create_directories(dir);
  auto doc = [](const std::string& stem) {
    return "<annotation><filename>" + stem + ".jpg</filename>"
           "<size><width>10</width><height>10</height></size>"
           "<object><name>cat</name>"
           "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox>"
           "</object></annotation>";
  };
  write_file((dir / "b.xml").string(), doc("b"));
  write_file((dir / "a.xml").string(), doc("a"));
  write_file((dir / "ignored.txt").string(), "not xml");

  auto corpus = load_voc_dir(dir.string());
  REQUIRE(corpus.scenes.size() == 2);
  auto scenes = scene_list(corpus);
  CHECK(scenes[0].id == "a");
  CHECK(scenes[1].id == "b");
  CHECK(corpus.classes.size() == 1);
  std::filesystem::remove_all(dir);
}
