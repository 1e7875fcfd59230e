"""Function units, call graphs and decomposition trees for subject programs.

A subject program is a single Python file. Every top-level ``def`` becomes a
FunctionUnit; nested definitions stay inside their enclosing unit. The call
graph between units is turned into a rooted tree (the decomposition tree) and
can be flattened back into one source text, dependencies first.
"""

import ast
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from mgdbg.errors import MissingEntryPoint, ParseError, SignatureRename
from mgdbg.utils import count_tokens

logger = logging.getLogger(__name__)

_FunctionNode = (ast.FunctionDef, ast.AsyncFunctionDef)


@dataclass(frozen=True)
class FunctionUnit:
    name: str
    signature: str
    source: str
    docstring: Optional[str]
    # Other units referenced by the body, in order of first reference.
    callees: Tuple[str, ...]
    token_count: int

    @property
    def callee_set(self) -> FrozenSet[str]:
        return frozenset(self.callees)


@dataclass(frozen=True)
class CodeArtifact:
    raw_source: str
    units: Tuple[FunctionUnit, ...]
    entry_point: str
    preamble: str = ""
    # Statements after the first definition that depend on units.
    trailer: str = ""

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(unit.name for unit in self.units)

    def unit(self, name: str) -> FunctionUnit:
        for unit in self.units:
            if unit.name == name:
                return unit
        raise KeyError(name)


@dataclass(frozen=True)
class DecompositionTree:
    root: str
    children: Dict[str, Tuple[str, ...]]
    artifact: CodeArtifact
    warnings: Tuple[str, ...] = field(default=(), compare=False)

    def unit(self, name: str) -> FunctionUnit:
        return self.artifact.unit(name)

    @property
    def reachable(self) -> Set[str]:
        return set(self.children)

    def post_order(self, start: Optional[str] = None) -> List[str]:
        """Children strictly before parents, each node once, `start` last."""
        order: List[str] = []
        seen: Set[str] = set()

        def visit(name: str) -> None:
            seen.add(name)
            for child in self.children.get(name, ()):
                if child not in seen:
                    visit(child)
            order.append(name)

        visit(start or self.root)
        return order

    def descendants(self, name: str) -> List[str]:
        return self.post_order(name)[:-1]

    def parents(self, name: str) -> List[str]:
        return [parent for parent, kids in self.children.items() if name in kids]

    def depth(self) -> int:
        def height(name: str) -> int:
            kids = self.children.get(name, ())
            return 1 + max((height(kid) for kid in kids), default=0)

        return height(self.root)


def _start_line(node: ast.stmt) -> int:
    decorators = getattr(node, "decorator_list", [])
    return min([node.lineno] + [d.lineno for d in decorators])


def _segment(lines: Sequence[str], node: ast.stmt) -> str:
    return "\n".join(lines[_start_line(node) - 1 : node.end_lineno])


def _is_main_guard(node: ast.stmt) -> bool:
    if not isinstance(node, ast.If) or not isinstance(node.test, ast.Compare):
        return False
    parts = [node.test.left, *node.test.comparators]
    names = {p.id for p in parts if isinstance(p, ast.Name)}
    consts = {p.value for p in parts if isinstance(p, ast.Constant)}
    return "__name__" in names and "__main__" in consts


def _names_used(node: ast.AST) -> Set[str]:
    """Names evaluated when `node` runs; function and lambda bodies are skipped."""
    used: Set[str] = set()
    stack: List[ast.AST] = [node]
    while stack:
        current = stack.pop()
        if isinstance(current, (*_FunctionNode, ast.Lambda)):
            args = current.args
            stack.extend(args.defaults)
            stack.extend(d for d in args.kw_defaults if d is not None)
            if not isinstance(current, ast.Lambda):
                stack.extend(current.decorator_list)
                params = args.posonlyargs + args.args + args.kwonlyargs
                stack.extend(a.annotation for a in params if a.annotation)
                if current.returns:
                    stack.append(current.returns)
            continue
        if isinstance(current, ast.Name):
            used.add(current.id)
        stack.extend(ast.iter_child_nodes(current))
    return used


def _names_bound(node: ast.stmt) -> Set[str]:
    bound = {n.id for n in ast.walk(node) if isinstance(n, ast.Name) and isinstance(n.ctx, ast.Store)}
    if isinstance(node, ast.ClassDef):
        bound.add(node.name)
    if isinstance(node, (ast.Import, ast.ImportFrom)):
        bound.update((alias.asname or alias.name).split(".")[0] for alias in node.names)
    return bound


def _split_statements(
    nodes: Sequence[ast.stmt], lines: Sequence[str], unit_names: Set[str]
) -> Tuple[List[str], List[str]]:
    """Sort module-level statements into (hoisted, late).

    Statements that need no function unit, directly or through a name bound
    by another late statement, are hoisted ahead of the units so defaults and
    annotations can use them. The rest run after every unit is defined, in
    source order. ``__main__`` guards are dropped.
    """
    hoisted: List[str] = []
    late: List[str] = []
    needs_units = set(unit_names)
    for node in nodes:
        if isinstance(node, _FunctionNode):
            continue
        if _is_main_guard(node):
            logger.debug("dropping __main__ guard at line %d", node.lineno)
            continue
        if _names_used(node) & needs_units:
            late.append(_segment(lines, node))
            needs_units |= _names_bound(node)
        else:
            hoisted.append(_segment(lines, node))
    return hoisted, late


def _references(node: ast.AST, unit_names: Set[str]) -> Tuple[str, ...]:
    """Unit names loaded inside `node`, ordered by position of first use.

    Bare references count as well as calls, so a helper passed as
    ``key=helper`` keeps its edge.
    """
    hits = [
        n
        for n in ast.walk(node)
        if isinstance(n, ast.Name) and isinstance(n.ctx, ast.Load) and n.id in unit_names
    ]
    hits.sort(key=lambda n: (n.lineno, n.col_offset))
    ordered: List[str] = []
    for hit in hits:
        if hit.id not in ordered:
            ordered.append(hit.id)
    return tuple(ordered)


def _make_unit(node: ast.stmt, lines: Sequence[str], unit_names: Set[str]) -> FunctionUnit:
    assert isinstance(node, _FunctionNode)
    source = _segment(lines, node)
    return FunctionUnit(
        name=node.name,
        signature=ast.unparse(node.args),
        source=source,
        docstring=ast.get_docstring(node),
        callees=_references(node, unit_names),
        token_count=count_tokens(source),
    )


def _parse_module(source: str) -> ast.Module:
    try:
        return ast.parse(source)
    except SyntaxError as e:
        raise ParseError(f"line {e.lineno}: {e.msg}") from e
    except ValueError as e:  # null bytes
        raise ParseError(str(e)) from e


def parse_artifact(source: str, entry_point: str) -> CodeArtifact:
    """Split `source` into function units and compute their call edges."""
    module = _parse_module(source)
    lines = source.splitlines()

    defs = [node for node in module.body if isinstance(node, _FunctionNode)]
    if not defs:
        raise ParseError("no top-level function definition found")

    latest: Dict[str, ast.stmt] = {}
    for node in defs:
        if node.name in latest:
            logger.warning("duplicate definition of %s; keeping the last one", node.name)
        latest[node.name] = node
    if entry_point not in latest:
        raise MissingEntryPoint(
            f"entry point {entry_point!r} not defined (found: {', '.join(latest)})"
        )

    names = set(latest)
    units = tuple(
        _make_unit(node, lines, names) for node in defs if latest[node.name] is node
    )

    first_line = _start_line(defs[0])
    head = "\n".join(lines[: first_line - 1]).strip("\n")
    hoisted, late = _split_statements(
        [node for node in module.body if node.lineno >= first_line], lines, names
    )

    return CodeArtifact(
        raw_source=source,
        units=units,
        entry_point=entry_point,
        preamble="\n\n".join(part for part in [head, *hoisted] if part),
        trailer="\n".join(late),
    )


def build_tree(artifact: CodeArtifact) -> DecompositionTree:
    """Depth-first tree over the call graph rooted at the entry point.

    Self calls and back edges stay in `callees` but are left out of
    `children`; units the root never reaches are left out of the tree.
    """
    children: Dict[str, Tuple[str, ...]] = {}
    on_path: Set[str] = set()
    warnings: List[str] = []

    def visit(name: str) -> None:
        on_path.add(name)
        kids: List[str] = []
        for callee in artifact.unit(name).callees:
            if callee == name:
                warnings.append(f"{name} is recursive; self edge left out of the tree")
                continue
            if callee in on_path:
                warnings.append(f"call cycle through {name} -> {callee}; back edge dropped")
                continue
            kids.append(callee)
            if callee not in children:
                visit(callee)
        children[name] = tuple(kids)
        on_path.discard(name)

    visit(artifact.entry_point)

    for name in artifact.names:
        if name not in children:
            warnings.append(f"{name} is unreachable from {artifact.entry_point}; dropped")

    for warning in warnings:
        logger.warning(warning)

    return DecompositionTree(
        root=artifact.entry_point,
        children=children,
        artifact=artifact,
        warnings=tuple(warnings),
    )


def _join(parts: Sequence[str]) -> str:
    return "\n\n\n".join(part for part in parts if part.strip()) + "\n"


def flatten(tree: DecompositionTree) -> str:
    """Preamble, reachable units dependencies-first (root last), trailer."""
    artifact = tree.artifact
    sources = [tree.unit(name).source for name in tree.post_order()]
    return _join([artifact.preamble, *sources, artifact.trailer])


def subtree_source(tree: DecompositionTree, name: str) -> str:
    """Preamble plus the sources of everything below `name`."""
    sources = [tree.unit(child).source for child in tree.descendants(name)]
    return _join([tree.artifact.preamble, *sources])


def merge_statements(block: str, statements: Sequence[str]) -> str:
    """Append the statements not already present in `block`, in order."""
    present = {line.strip() for line in block.splitlines()}
    added = []
    for stmt in statements:
        text = stmt.strip()
        if not text or text in present or ("\n" in text and text in block):
            continue
        added.append(stmt)
        present.add(text)
    if not added:
        return block
    return "\n".join(part for part in [block, *added] if part)


def replace_unit(tree: DecompositionTree, name: str, new_source: str) -> DecompositionTree:
    """Swap in a new definition of `name` and rebuild the tree.

    `new_source` must define `name`. Definitions of names the program does
    not have yet are added as new units; redefinitions of other existing
    units are ignored. Module-level statements next to them are merged into
    the preamble, or into the trailer when they need a unit.
    """
    artifact = tree.artifact
    if name not in artifact.names:
        raise KeyError(name)

    module = _parse_module(new_source)
    lines = new_source.splitlines()
    defs = [node for node in module.body if isinstance(node, _FunctionNode)]
    targets = [node for node in defs if node.name == name]
    if not targets:
        found = ", ".join(node.name for node in defs) or "no definition"
        raise SignatureRename(f"replacement for {name!r} defines {found}")

    helpers = [
        _segment(lines, node)
        for node in defs
        if node.name != name and node.name not in artifact.names
    ]
    ignored = [node.name for node in defs if node.name != name and node.name in artifact.names]
    if ignored:
        logger.debug("ignoring redefinitions of %s in patch for %s", ignored, name)

    unit_names = set(artifact.names) | {node.name for node in defs}
    hoisted, late = _split_statements(module.body, lines, unit_names)

    sources: List[str] = []
    for unit in artifact.units:
        if unit.name == name:
            sources.extend(helpers)
            sources.append(_segment(lines, targets[-1]))
        else:
            sources.append(unit.source)

    preamble = merge_statements(artifact.preamble, hoisted)
    trailer = merge_statements(artifact.trailer, late)
    rebuilt = parse_artifact(_join([preamble, *sources, trailer]), artifact.entry_point)
    return build_tree(rebuilt)


def with_preamble(artifact: CodeArtifact, preamble: str) -> CodeArtifact:
    """Re-parse `artifact` with its preamble swapped for `preamble`."""
    sources = [unit.source for unit in artifact.units]
    return parse_artifact(_join([preamble, *sources, artifact.trailer]), artifact.entry_point)
