# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Manager for persisted harness state."""

import json
from pathlib import Path

from utils import atomic_write


class State:
    """A magic state that uses a JSON file as the data store.

    Every attribute assignment rewrites the file atomically, so an
    interrupted command never leaves a half-written state behind. Unknown
    names read as None.
    """

    def __init__(self, path):
        """Construct.

        Args:
            path: location of the JSON file backing the state.
        """
        # Use __dict__ to avoid calling __setattr__
        # and subsequent infinite recursion.
        self.__dict__["_path"] = Path(path)

    def _load(self):
        """Read the whole store.

        Returns:
            dictionary held in the backing file, empty if absent.
        """
        if not self._path.exists():
            return {}
        return json.loads(self._path.read_text(encoding="utf-8"))

    def _dump(self, data):
        """Replace the whole store.

        Args:
            data: dictionary to persist.
        """
        content = json.dumps(data, indent=2, sort_keys=True) + "\n"
        atomic_write(self._path, content)

    def __setattr__(self, name, value):
        """Set a value in the store with the given name.

        Args:
            name: name of value to set in store.
            value: JSON serializable value to set in store.
        """
        data = self._load()
        data[name] = value
        self._dump(data)

    def __getattr__(self, name):
        """Get from the store the value with the given name, or None.

        Args:
            name: name of value to get from store.

        Returns:
            value from store with given name.
        """
        if name.startswith("__"):
            raise AttributeError(name)
        return self._load().get(name)

    def __delattr__(self, name):
        """Delete the value with the given name from the store, if it exists.

        Args:
            name: name of value to delete from store.

        Returns:
            deleted value from store.
        """
        data = self._load()
        value = data.pop(name, None)
        self._dump(data)
        return value

    def as_dict(self):
        """Return a copy of every stored value.

        Returns:
            dictionary of stored values.
        """
        return self._load()

    def is_ready(self):
        """Report whether the backing file has been written.

        Returns:
            A boolean representing whether the state exists on disk.
        """
        return self._path.exists()
