"""Database Versioning"""
# pylint: disable=too-few-public-methods

from sqlalchemy.orm import Mapped, mapped_column
from sqlalchemy.sql.expression import select

from ._base import ResultsBase
from ..errors import ConfigError

DATABASE_VERSION_MAJOR = 1
DATABASE_VERSION_MINOR = 0

class DatabaseVersion(ResultsBase):
    """Version"""
    __tablename__ = "database_version"

    id: Mapped[int] = mapped_column(primary_key=True)
    major: Mapped[int] = mapped_column(insert_default=DATABASE_VERSION_MAJOR)
    minor: Mapped[int] = mapped_column(insert_default=DATABASE_VERSION_MINOR)

def get_database_version(session_factory):
    """Get version of the database behind session_factory"""
    with session_factory() as session:
        version = session.scalars(select(DatabaseVersion).limit(1)).one_or_none()
    if version is None:
        raise ConfigError("results.db", "database version was not found")
    return (version.major, version.minor)

def check_database_version(session_factory):
    """Refuse databases written by an incompatible schema"""
    major, minor = get_database_version(session_factory)
    if major != DATABASE_VERSION_MAJOR or minor > DATABASE_VERSION_MINOR:
        raise ConfigError("results.db", f"Unknown database version v{major}.{minor}")
