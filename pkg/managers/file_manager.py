"""
Manages the output directory: text, CSV and binary artifacts.
"""

import asyncio
import io
import logging
import os
from typing import Callable, List, TextIO

from solvers.value_field import ValueField
from utils.errors import FieldFormatError

logger = logging.getLogger(__name__)


class FileManager:
    """
    Writes run artifacts under one output directory.

    Blocking file IO runs in worker threads so the command handler's event
    loop stays free, as for the solver calls.
    """

    def __init__(self, out_dir: str, encoding: str = "utf-8"):
        """
        Initialize the file manager.

        Args:
            out_dir: Directory receiving every artifact of the run
            encoding: Text encoding for reports and CSV files
        """
        self.out_dir = os.path.abspath(out_dir)
        self.encoding = encoding
        self.written: List[str] = []

    def path(self, name: str) -> str:
        """Absolute path of an artifact."""
        return os.path.join(self.out_dir, name)

    def _ensure_dir(self) -> None:
        os.makedirs(self.out_dir, exist_ok=True)

    def _write_text_sync(self, name: str, content: str) -> str:
        self._ensure_dir()
        target = self.path(name)
        with open(target, "w", encoding=self.encoding, newline="") as handle:
            handle.write(content)
        return target

    async def write_text(self, name: str, content: str) -> str:
        """
        Write a text artifact, replacing any previous version.

        Returns:
            Path of the written file
        """
        target = await asyncio.to_thread(self._write_text_sync, name, content)
        self.written.append(target)
        logger.debug("wrote %s (%d chars)", target, len(content))
        return target

    async def write_csv(self, name: str, writer: Callable[[TextIO], None]) -> str:
        """
        Write a CSV artifact produced by a `write_csv(stream)` method.

        Args:
            name: File name inside the output directory
            writer: Callable filling a text stream
        """
        buffer = io.StringIO()
        writer(buffer)
        return await self.write_text(name, buffer.getvalue())

    def _write_bytes_sync(self, name: str, data: bytes) -> str:
        self._ensure_dir()
        target = self.path(name)
        with open(target, "wb") as handle:
            handle.write(data)
        return target

    async def write_bytes(self, name: str, data: bytes) -> str:
        target = await asyncio.to_thread(self._write_bytes_sync, name, data)
        self.written.append(target)
        logger.debug("wrote %s (%d bytes)", target, len(data))
        return target

    async def write_field(self, field_: ValueField, stem: str = "field") -> List[str]:
        """Write a value field as `<stem>.csv` and the binary dump `<stem>.shjb`."""
        csv_path = await self.write_csv(f"{stem}.csv", field_.write_csv)
        dump_path = await self.write_bytes(f"{stem}.shjb", field_.to_bytes())
        return [csv_path, dump_path]

    async def read_field(self, path: str) -> ValueField:
        """
        Load a binary field dump.

        Raises:
            FieldFormatError: If the file is missing, truncated or has the wrong magic
        """
        if not os.path.isfile(path):
            raise FieldFormatError(f"field file not found: {path}")

        def read() -> bytes:
            with open(path, "rb") as handle:
                return handle.read()

        data = await asyncio.to_thread(read)
        return ValueField.from_bytes(data)
