import numpy as np
import pytest

import odssd

CAR_XML = """<annotation>
  <folder>testset</folder>
  <filename>kitti_stacked_000008_10.jpg</filename>
  <path>/data/kitti_stacked_000008_10.jpg</path>
  <source><database>Unknown</database></source>
  <size><width>1242</width><height>750</height><depth>3</depth></size>
  <segmented>0</segmented>
  <object>
    <name>car</name><pose>Unspecified</pose><truncated>0</truncated><difficult>0</difficult>
    <bndbox><xmin>325</xmin><ymin>192</ymin><xmax>416</xmax><ymax>261</ymax></bndbox>
    <delta><dx>28.0</dx><dy>-2.0</dy></delta>
    <bndbox2><xmin>297</xmin><ymin>569</ymin><xmax>388</xmax><ymax>638</ymax></bndbox2>
  </object>
</annotation>
"""


def test_object_disparity_branches():
    left = odssd.BBox(325, 192, 416, 261)
    right = odssd.BBox(297, 194, 388, 263)
    assert tuple(odssd.object_disparity(left, right, 1242, 375)) == (28.0, -2.0)
    # Touching x = 0 differences the high edges.
    edge = odssd.object_disparity(odssd.BBox(0, 10, 50, 40), odssd.BBox(0, 10, 30, 40), 100, 100)
    assert edge.dx == 20.0
    with pytest.raises(odssd.InvalidInput):
        odssd.object_disparity(odssd.BBox(0, 0, 200, 10), left, 100, 100)


def test_annotation_round_trip_and_schema_error():
    doc = odssd.parse_annotation(CAR_XML)
    assert doc.height == 750 and len(doc.objects) == 1
    assert doc.objects[0].delta == (28.0, -2.0)
    again = odssd.parse_annotation(odssd.write_annotation(doc))
    assert again == doc
    with pytest.raises(odssd.SchemaError) as info:
        odssd.parse_annotation(CAR_XML.replace("<delta><dx>28.0</dx><dy>-2.0</dy></delta>", ""))
    assert info.value.element == "object[0]/delta"
    assert isinstance(info.value, odssd.Error)


def test_architecture_shapes_and_priors():
    cfg = odssd.ModelConfig.stereo640()
    assert odssd.head_grids(cfg) == [(20, 40), (10, 20), (5, 10), (3, 5)]
    assert odssd.prior_count(cfg) == 6390
    assert len(odssd.generate_priors(cfg)) == 6390
    shapes = odssd.Model(cfg).shapes()
    assert shapes["tap"] == [1, 256, 40, 40]
    assert shapes["folded_tap"] == [1, 512, 20, 40]
    assert shapes["locations"] == [1, 6390, 6]


def test_reference_model_size():
    sizes = odssd.Model(odssd.ModelConfig.voc_reference640()).serialized_sizes()
    assert 5.1e6 <= sizes["fp32"] <= 6.3e6
    assert 1.4e6 <= sizes["int8"] <= 2.0e6


def test_codec_round_trip():
    cfg = odssd.ModelConfig.stereo640()
    params = odssd.CodecParams.from_config(cfg)
    prior = odssd.generate_priors(cfg)[123]
    box = odssd.BBox(100.5, 40.25, 180.0, 120.0)
    loc = odssd.encode(box, 17.5, -3.0, prior, params)
    back, dx, dy = odssd.decode(loc, prior, params)
    assert np.allclose(back.as_tuple(), box.as_tuple(), atol=1e-9)
    assert (dx, dy) == pytest.approx((17.5, -3.0))


def test_nms_keeps_best_of_overlapping():
    boxes = [odssd.BBox(0, 0, 10, 10), odssd.BBox(1, 1, 11, 11), odssd.BBox(50, 50, 60, 60)]
    assert odssd.nms(boxes, [0.5, 0.9, 0.7], 0.45) == [1, 2]


def test_scene_stack_and_png():
    spec = odssd.SceneSpec()
    spec.seed = 7
    scene = odssd.generate_scene(spec, 0)
    assert scene["left"].shape == (80, 160, 3)
    stacked = odssd.stack_pair(scene["left"], scene["right"])
    assert stacked.shape == (160, 160, 3)
    assert np.array_equal(odssd.decode_image(odssd.encode_png(stacked)), stacked)
    obj = scene["objects"][0]
    assert obj["left_box"][0] - obj["right_box"][0] == obj["dx"]
    model = odssd.Model(odssd.ModelConfig.toy())
    assert isinstance(model.detect(stacked), list)
    with pytest.raises(odssd.InvalidInput):
        odssd.stack_pair(scene["left"], scene["right"][:10])
