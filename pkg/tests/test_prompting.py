from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bootplan import prompting, tasks
from bootplan.model import EnvState, ObjectState, Pose, TaskId

TEMPLATE = prompting.default_template()


def test_default_template_has_markers_once():
    for m in prompting.MARKERS:
        assert TEMPLATE.text.count(m) == 1
    assert "meters" in TEMPLATE.text and "radians" in TEMPLATE.text


@pytest.mark.parametrize("marker", prompting.MARKERS)
def test_missing_marker_rejected(marker):
    with pytest.raises(prompting.PromptError):
        prompting.PromptTemplate(TEMPLATE.text.replace(marker, ""))


def test_duplicated_marker_rejected():
    with pytest.raises(prompting.PromptError):
        prompting.PromptTemplate(TEMPLATE.text + "{{STATE}}")


def test_template_from_file(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("{{TASK}} {{EE_POSITION}} {{EE_ORIENTATION}}\n{{STATE}}", encoding="utf-8")
    assert prompting.PromptTemplate.from_file(p).text.startswith("{{TASK}}")


def test_serialize_empty_scene():
    assert prompting.serialize_state(EnvState((), Pose(0, 0, 0.4))) == ""


def test_serialize_unit_block():
    b = ObjectState("b", "unit block", Pose(0, 0, 0), 1, 1, 1)
    assert prompting.serialize_state(EnvState((b,), Pose(0, 0, 0.4))) == (
        "unit block: center=(0.0000, 0.0000, 0.0000), yaw=0.0000, "
        "size=(1.0000, 1.0000, 1.0000)"
    )


def test_serialize_sorted_by_id():
    inst = tasks.randomize(tasks.task_spec(TaskId.STACK_BLOCKS), 4)
    lines = prompting.serialize_state(inst.initial_state).splitlines()
    objs = sorted(inst.initial_state.objects, key=lambda o: o.id)
    assert len(lines) == len(objs)
    assert [ln.split(":")[0] for ln in lines] == [o.name for o in objs]


def test_build_prompt_put_block():
    inst = tasks.randomize(tasks.task_spec(TaskId.PUT_BLOCK), 7)
    text = prompting.build_prompt(TEMPLATE, inst)
    assert inst.goal_bindings["color"] in text
    assert "block: center=(" in text
    assert "(0.0000, 0.0000, 0.4000)" in text
    assert "{{" not in text
    assert text == prompting.build_prompt(TEMPLATE, inst)


def test_inserted_text_is_not_rescanned():
    inst = tasks.randomize(tasks.task_spec(TaskId.PUT_BLOCK), 7)
    weird = replace(inst, description="Put it where {{STATE}} says.")
    text = prompting.build_prompt(TEMPLATE, weird)
    assert "Put it where {{STATE}} says." in text


def test_unresolved_description_rejected():
    inst = tasks.randomize(tasks.task_spec(TaskId.PUT_BLOCK), 7)
    with pytest.raises(prompting.UnresolvedPlaceholder):
        prompting.build_prompt(TEMPLATE, replace(inst, description="Put the {color} block"))
    with pytest.raises(prompting.UnresolvedPlaceholder):
        prompting.build_prompt(TEMPLATE, replace(inst, description=""))


@settings(max_examples=60)
@given(st.sampled_from(tasks.ALL_TASKS), st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
def test_distinct_scenes_distinct_prompts(task, s1, s2):
    a = tasks.randomize(tasks.task_spec(task), s1)
    b = tasks.randomize(tasks.task_spec(task), s2)
    same_state = prompting.serialize_state(a.initial_state) == prompting.serialize_state(
        b.initial_state)
    same_prompt = prompting.build_prompt(TEMPLATE, a) == prompting.build_prompt(TEMPLATE, b)
    if not same_state:
        assert not same_prompt
