"""Prompt templates.

The decompose, testgen and debug texts are kept verbatim; anything the
pipeline needs to parse replies is appended after them as a separate
format instruction, never edited into them.
"""

import string
from dataclasses import dataclass
from typing import Dict, Mapping, Set, Tuple

from mgdbg.errors import MissingSlot

TEMPLATE_IDS = ("decompose", "testgen", "simulate", "debug", "simple_feedback", "codegen")

DECOMPOSE_PROMPT = """Convert the following Python code into a tree-style hierarchical structure with multiple levels of sub-functions.
Each significant step or logical block should be its own function, and functions can call other sub-functions.
Ensure that the main function calls these sub-functions in the correct order, creating a tree-like structure.

Original Code:

{code}

Instruction:

Please first analyze the codes step by step, and then provide the converted code in a Python code block. When providing the final converted code, make sure to include all the functions in a flattened format, where each function is defined separately."""

TESTGEN_SYSTEM = "You are an AI assistant specialized in analyzing Python functions and generating test cases."

TESTGEN_PROMPT = """Full Code:

{full_code}

Public Test Cases for the Main Function:

{public_test_cases}

Instruction:

Please analyze how the {function_name} function is used within the main function and how it contributes to the expected outputs in the gold test cases. For each test case, you should analyze step-by-step based on both the input and the expected output of the main function, and then provide the corresponding input and expected output for the {function_name} function. Ensure that the generated test cases are consistent with the behavior expected in the public test cases."""

TESTGEN_FORMAT = """

Finally, write every derived test case as a Python assert statement that calls {function_name} directly, for example `assert {function_name}(...) == ...`, one per line, all inside a single Python code block at the end of your reply."""

DEBUG_SYSTEM = "You are an AI assistant helping to debug Python functions."

DEBUG_PROMPT = """Debug the following Python function. The function is not passing all test cases. Analyze the code, identify the bug, and provide a fixed version of the function.

Function Code:

{function_code}

Test Case Results:

{test_case_results}

Instruction:

Please try to work as a Python interpreter to execute the code step-by-step. Identify the change of each variable as you "run" the code line-by-line. Based on the execution trace, try to identify the bug and provide the final fixed code in a Python code block."""

SIMULATE_PROMPT = """Execute the following Python function on the given test cases. Do not fix the code; only decide whether each test case passes.

Function Code:

{function_code}

Verified Helper Code:

{context_code}

Test Cases:

{test_cases}

Instruction:

Please try to work as a Python interpreter to execute the code step-by-step. Identify the change of each variable as you "run" the code line-by-line. Based on the execution trace, decide for each test case whether its assertion holds."""

VERDICT_FORMAT = """

After the analysis, end your reply with these lines and nothing after them:
- one line per test case, in order: `VERDICT <index>: PASS — <reason>` or `VERDICT <index>: FAIL — <reason>`
- for each test case, one line per local variable of {function_name} with its value when {function_name} returns: `STATE <index>: <name> = <Python literal>`"""

SIMPLE_FEEDBACK_SYSTEM = "You are an AI assistant helping to fix Python code."

SIMPLE_FEEDBACK_PROMPT = """The following Python code is incorrect: it does not pass all test cases. Please fix it.

Code:

{code}

Failed Test Cases:

{failed_tests}

Instruction:

Provide the final fixed code in a Python code block."""

CODEGEN_SYSTEM = "You are an AI assistant that writes correct Python code."

CODEGEN_PROMPT = """Complete the following Python task.

{task}

Instruction:

Provide the complete implementation, including the function `{entry_point}`, in a single Python code block."""


@dataclass(frozen=True)
class PromptTemplate:
    system: str
    user: str

    @property
    def slots(self) -> Set[str]:
        names = set()
        for text in (self.system, self.user):
            for _, field_name, _, _ in string.Formatter().parse(text):
                if field_name:
                    names.add(field_name)
        return names


TEMPLATES: Dict[str, PromptTemplate] = {
    "decompose": PromptTemplate("", DECOMPOSE_PROMPT),
    "testgen": PromptTemplate(TESTGEN_SYSTEM, TESTGEN_PROMPT + TESTGEN_FORMAT),
    "simulate": PromptTemplate(DEBUG_SYSTEM, SIMULATE_PROMPT + VERDICT_FORMAT),
    "debug": PromptTemplate(DEBUG_SYSTEM, DEBUG_PROMPT),
    "simple_feedback": PromptTemplate(SIMPLE_FEEDBACK_SYSTEM, SIMPLE_FEEDBACK_PROMPT),
    "codegen": PromptTemplate(CODEGEN_SYSTEM, CODEGEN_PROMPT),
}


def render_prompt(template_id: str, slots: Mapping[str, str]) -> Tuple[str, str]:
    """Substitute `slots` into a template, returning (system, user)."""
    template = TEMPLATES[template_id]
    missing = sorted(template.slots - set(slots))
    if missing:
        raise MissingSlot(f"template {template_id!r} needs slot(s): {', '.join(missing)}")
    values = {name: str(slots[name]) for name in template.slots}
    return template.system.format(**values), template.user.format(**values)
