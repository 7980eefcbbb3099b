"""Emission-line database.

Plain text, one line per emission line, whitespace separated:
``element wavelength_nm relative_intensity species_label...`` where the
species label may itself contain spaces ("Li I").  A small curated set ships
with the package; an alternative file can be supplied through the config.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable


@dataclass(frozen=True)
class EmissionLine:
    element: str
    wavelength_nm: float
    rel_intensity: float
    species: str


class LineDbError(ValueError):
    pass


class LineDb:
    def __init__(self, lines: Iterable[EmissionLine]):
        self._lines = tuple(sorted(lines, key=lambda l: l.wavelength_nm))
        if not self._lines:
            raise LineDbError("line database is empty")
        by_element: dict[str, list[EmissionLine]] = {}
        for line in self._lines:
            by_element.setdefault(line.element, []).append(line)
        self._by_element = {
            el: tuple(sorted(ls, key=lambda l: -l.rel_intensity))
            for el, ls in by_element.items()
        }

    def __len__(self) -> int:
        return len(self._lines)

    def __iter__(self):
        return iter(self._lines)

    @property
    def elements(self) -> tuple[str, ...]:
        return tuple(sorted(self._by_element))

    def lines_for(self, element: str) -> tuple[EmissionLine, ...]:
        """Lines of one element, strongest first."""
        return self._by_element.get(element, ())

    @classmethod
    def parse(cls, text: str) -> "LineDb":
        lines = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) < 4:
                raise LineDbError(f"line {lineno}: expected at least 4 columns")
            element, wl, rel = parts[0], parts[1], parts[2]
            species = " ".join(parts[3:])
            try:
                wavelength = float(wl)
                rel_intensity = float(rel)
            except ValueError as exc:
                raise LineDbError(f"line {lineno}: bad number: {exc}") from exc
            if wavelength <= 0 or rel_intensity <= 0:
                raise LineDbError(f"line {lineno}: values must be positive")
            lines.append(EmissionLine(element, wavelength, rel_intensity, species))
        return cls(lines)

    @classmethod
    def load(cls, path: str | Path) -> "LineDb":
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def bundled(cls) -> "LineDb":
        text = (resources.files("labscan.devices") / "data" / "lines.txt").read_text(
            encoding="utf-8"
        )
        return cls.parse(text)
