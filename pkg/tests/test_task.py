"""Task definitions and answer-format contracts."""
from __future__ import annotations

import pytest

from instructforge.errors import ValidationError
from instructforge.task import (
    BOXED_LATEX,
    FINAL_ANSWER_LINE,
    MULTIPLE_CHOICE,
    YES_NO_MAYBE,
    AnswerFormat,
    TaskDefinition,
    boxed_latex,
    final_answer_line,
    load_task,
    multiple_choice,
    yes_no_maybe,
)


class TestAnswerFormats:
    def test_multiple_choice_suffix(self):
        fmt = multiple_choice()
        assert fmt.kind == MULTIPLE_CHOICE
        assert fmt.options == ("A", "B", "C", "D")
        assert fmt.suffix_text == (
            "Return exactly two lines and nothing else:\n"
            "Reason: <1-3 sentence explanation>\n"
            "Answer: <A|B|C|D>"
        )

    def test_multiple_choice_custom_options(self):
        fmt = multiple_choice(("A", "B", "C"))
        assert fmt.options == ("A", "B", "C")
        assert "Answer: <A|B|C>" in fmt.suffix_text

    def test_yes_no_maybe_suffix(self):
        fmt = yes_no_maybe()
        assert fmt.kind == YES_NO_MAYBE
        assert fmt.options == ()
        assert "Answer: <yes|no|maybe>" in fmt.suffix_text

    def test_final_answer_line_suffix(self):
        fmt = final_answer_line()
        assert fmt.kind == FINAL_ANSWER_LINE
        assert fmt.suffix_text == (
            "Provide a step-by-step reasoning process and then write the final "
            "numerical answer on a new line in the format: final answer: <answer>"
        )

    def test_boxed_latex_suffix(self):
        fmt = boxed_latex()
        assert fmt.kind == BOXED_LATEX
        assert fmt.suffix_text == (
            "Provide a step-by-step reasoning process and then write the final "
            "answer in the LaTeX boxed tag: $\\boxed{<answer>}$"
        )

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError, match="unknown answer format"):
            AnswerFormat("freeform", "whatever")

    @pytest.mark.parametrize("label", ["a", "", "A B", "Ab"])
    def test_bad_option_labels(self, label):
        with pytest.raises(ValidationError):
            multiple_choice(("A", label))

    def test_multi_character_labels_allowed(self):
        fmt = multiple_choice(("AA", "BB"))
        assert fmt.options == ("AA", "BB")

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            multiple_choice(("A", "A"))

    def test_no_options_rejected_for_mc(self):
        with pytest.raises(ValidationError):
            multiple_choice(())

    def test_options_rejected_elsewhere(self):
        with pytest.raises(ValidationError, match="does not take options"):
            AnswerFormat(FINAL_ANSWER_LINE, "suffix", ("A",))

    def test_blank_suffix_rejected(self):
        with pytest.raises(ValidationError, match="suffix_text"):
            AnswerFormat(FINAL_ANSWER_LINE, "   ")


class TestTaskDefinition:
    def test_domain_label_defaults_to_name(self):
        task = TaskDefinition("demo", "A task.", final_answer_line())
        assert task.domain_label == "demo"

    def test_explicit_domain_label(self):
        task = TaskDefinition("demo", "A task.", final_answer_line(), domain_label="math")
        assert task.domain_label == "math"

    def test_blank_name_rejected(self):
        with pytest.raises(ValidationError, match="name"):
            TaskDefinition("  ", "A task.", final_answer_line())

    def test_blank_description_rejected(self):
        with pytest.raises(ValidationError, match="description"):
            TaskDefinition("demo", "", final_answer_line())


class TestLoadTask:
    def write(self, tmp_path, text, name="demo_task.txt"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_full_mc_task(self, tmp_path):
        path = self.write(
            tmp_path,
            "name = finance\n"
            "description = Answer finance questions.\n"
            "domain_label = corporate finance\n"
            "answer_format = multiple_choice\n"
            "options = A, B, C\n",
        )
        task = load_task(path)
        assert task.name == "finance"
        assert task.domain_label == "corporate finance"
        assert task.answer_format.options == ("A", "B", "C")

    def test_name_defaults_to_stem(self, tmp_path):
        path = self.write(
            tmp_path,
            "description = Solve problems.\nanswer_format = final_answer_line\n",
            name="word_problems.txt",
        )
        task = load_task(path)
        assert task.name == "word_problems"
        assert task.domain_label == "word_problems"

    def test_default_mc_options(self, tmp_path):
        path = self.write(
            tmp_path,
            "description = Pick one.\nanswer_format = multiple_choice\n",
        )
        assert load_task(path).answer_format.options == ("A", "B", "C", "D")

    def test_suffix_override(self, tmp_path):
        path = self.write(
            tmp_path,
            "description = Solve.\nanswer_format = final_answer_line\n"
            "suffix = End with final answer: <answer>\n",
        )
        assert load_task(path).answer_format.suffix_text == "End with final answer: <answer>"

    def test_unknown_key_rejected(self, tmp_path):
        path = self.write(
            tmp_path,
            "description = Solve.\nanswer_format = final_answer_line\nbudget = 3\n",
        )
        with pytest.raises(ValidationError, match="budget"):
            load_task(path)

    def test_missing_format_rejected(self, tmp_path):
        path = self.write(tmp_path, "description = Solve.\n")
        with pytest.raises(ValidationError, match="answer_format"):
            load_task(path)

    def test_bad_format_rejected(self, tmp_path):
        path = self.write(
            tmp_path, "description = Solve.\nanswer_format = essay\n"
        )
        with pytest.raises(ValidationError, match="essay"):
            load_task(path)

    def test_options_on_non_mc_rejected(self, tmp_path):
        path = self.write(
            tmp_path,
            "description = Solve.\nanswer_format = boxed_latex\noptions = A,B\n",
        )
        with pytest.raises(ValidationError, match="options"):
            load_task(path)

    def test_missing_description_rejected(self, tmp_path):
        path = self.write(tmp_path, "answer_format = yes_no_maybe\n")
        with pytest.raises(ValidationError):
            load_task(path)
